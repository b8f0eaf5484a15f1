"""
Synthetic Price Source

Spec grammar:

    synth:<model>:key=value,key=value,...

    model   factor | uniform
    n       number of assets (required)
    T       number of price rows (required)
    f       factors for the factor model (default 3)
    rho     pairwise correlation for the uniform model (default 0)
    seed    generator seed (default: MARGIN_MASTER_SEED)
    vol     daily log-return volatility (default 0.02)

Example:
    synth:factor:n=395,T=2500
    synth:uniform:n=2,T=10000,rho=0.9,seed=7
"""

import hashlib
from dataclasses import dataclass
from typing import Optional

from margin_config import get_master_seed
from market_data import CorrelationModel, PriceMatrix, synth_prices
from reporting import console

SYNTH_PREFIX = "synth:"
_KNOWN_KEYS = {"n", "T", "f", "rho", "seed", "vol"}


@dataclass(frozen=True)
class SynthSpec:
    model: CorrelationModel
    n: int
    n_obs: int
    seed: int
    daily_vol: float = 0.02

    def canonical(self) -> str:
        """Normalized spec string with every default materialized."""
        if self.model.kind == "factor":
            extra = f"f={self.model.factors}"
        else:
            extra = f"rho={self.model.rho!r}"
        return (
            f"{SYNTH_PREFIX}{self.model.kind}:n={self.n},T={self.n_obs},{extra},"
            f"seed={self.seed},vol={self.daily_vol!r}"
        )


def is_synth_spec(source: str) -> bool:
    return source.strip().lower().startswith(SYNTH_PREFIX)


def parse_synth_spec(source: str, default_seed: Optional[int] = None) -> SynthSpec:
    """
    Parse a synth: spec string.

    Raises:
        ValueError: unknown model, unknown key, or missing n / T
    """
    parts = source.strip().split(":", 2)
    if len(parts) != 3 or parts[0].lower() != "synth":
        raise ValueError(f"synthetic spec must look like 'synth:factor:n=16,T=500', got {source!r}")
    kind = parts[1].strip().lower()
    if kind not in ("factor", "uniform"):
        raise ValueError(f"unknown synthetic model {kind!r}; expected factor or uniform")

    values = {}
    for item in filter(None, (p.strip() for p in parts[2].split(","))):
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or key not in _KNOWN_KEYS:
            raise ValueError(f"bad synthetic spec entry {item!r}; keys are {sorted(_KNOWN_KEYS)}")
        values[key] = raw.strip()
    if "n" not in values or "T" not in values:
        raise ValueError(f"synthetic spec needs n and T, got {source!r}")

    try:
        n = int(values["n"])
        n_obs = int(values["T"])
        seed = int(values["seed"]) if "seed" in values else (
            get_master_seed() if default_seed is None else default_seed
        )
        vol = float(values.get("vol", "0.02"))
        if kind == "factor":
            model = CorrelationModel.factor(int(values.get("f", "3")))
        else:
            model = CorrelationModel.uniform(float(values.get("rho", "0")))
    except ValueError as e:
        raise ValueError(f"bad synthetic spec {source!r}: {e}")
    return SynthSpec(model, n, n_obs, seed, vol)


def load_synth_source(source: str) -> PriceMatrix:
    spec = parse_synth_spec(source)
    console.print(f"🎲 Generating {spec.model.describe()} prices: n={spec.n}, T={spec.n_obs}, seed={spec.seed}")
    return synth_prices(spec.n, spec.n_obs, spec.model, spec.seed, daily_vol=spec.daily_vol)


def synth_digest(source: str) -> str:
    """SHA-256 of the canonical spec string."""
    return hashlib.sha256(parse_synth_spec(source).canonical().encode("utf-8")).hexdigest()
