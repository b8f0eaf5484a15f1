"""
Margin Configuration Module

Stores the defaults used by the risk model, the solvers and the experiments, and
provides getters that apply environment overrides (loaded from .env).
This module serves as the single source of truth for tunable settings.
"""

import os
from typing import Dict, List

from dotenv import load_dotenv

load_dotenv()


ARTIFACT_VERSION = "1.0.0"

# Defaults for the margin sweep (n = 16, 128 trials, |h_i| <= 1)
DEFAULT_PORTFOLIO_SIZE = 16
DEFAULT_TRIALS = 128
DEFAULT_FIELD_BOUND = 1.0
DEFAULT_GAMMA_RATIOS = [0.25, 0.5, 0.75, 1.5, 3.0, 10.0]

# Defaults for the critical-margin scaling runs
DEFAULT_SCALING_SIZES = [8, 16, 32, 64]
DEFAULT_SCALING_TRIALS = 64

DEFAULT_HISTOGRAM_BINS = 40

# Environment-backed settings: name -> (variable, default)
ENV_SETTINGS: Dict[str, tuple] = {
    "master_seed": ("MARGIN_MASTER_SEED", "20090201"),
    "oracle_cap": ("MARGIN_ORACLE_CAP", "24"),
    "condition_limit": ("MARGIN_CONDITION_LIMIT", "1e12"),
    "manifest_dir": ("MARGIN_MANIFEST_DIR", "manifests"),
    "workers": ("MARGIN_WORKERS", "1"),
    "synth_spec": ("MARGIN_SYNTH_SPEC", "synth:factor:n=395,T=2500"),
}


def _read_setting(key: str) -> str:
    variable, default = ENV_SETTINGS[key]
    return os.getenv(variable, default)


def _read_int(key: str, minimum: int) -> int:
    variable, _ = ENV_SETTINGS[key]
    raw = _read_setting(key)
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(
            f"{variable} must be an integer, got {raw!r}.\n"
            f"Example: {variable}={ENV_SETTINGS[key][1]}"
        )
    if value < minimum:
        raise ValueError(f"{variable} must be >= {minimum}, got {value}")
    return value


def get_master_seed() -> int:
    """
    Get the master seed that every experiment derives its per-trial seeds from.

    Returns:
        int: Non-negative seed (MARGIN_MASTER_SEED, default 20090201)

    Example:
        >>> get_master_seed()
        20090201
    """
    return _read_int("master_seed", 0)


def get_oracle_cap() -> int:
    """
    Get the largest portfolio size the exhaustive ground-state search accepts.

    The search visits 2**n spin states, so the cap bounds its running time.

    Returns:
        int: Maximum n for the oracle (MARGIN_ORACLE_CAP, default 24)
    """
    return _read_int("oracle_cap", 1)


def get_condition_limit() -> float:
    """
    Get the condition number above which an unshrunk covariance is rejected.

    Returns:
        float: Condition-number limit (MARGIN_CONDITION_LIMIT, default 1e12)
    """
    variable, _ = ENV_SETTINGS["condition_limit"]
    raw = _read_setting("condition_limit")
    try:
        value = float(raw)
    except ValueError:
        raise ValueError(f"{variable} must be a number, got {raw!r}. Example: {variable}=1e12")
    if not value > 1.0:
        raise ValueError(f"{variable} must be > 1, got {value}")
    return value


def get_manifest_dir() -> str:
    """Directory where run manifests go when no explicit path is given."""
    return _read_setting("manifest_dir")


def get_workers() -> int:
    """Default number of worker processes for trial loops (1 = serial)."""
    return _read_int("workers", 1)


def get_default_synth_spec() -> str:
    """
    Get the synthetic price spec used when no --prices value is supplied.

    Returns:
        str: Spec string such as "synth:factor:n=395,T=2500"
    """
    return _read_setting("synth_spec")


def get_default_ratios() -> List[float]:
    """Copy of the default gamma/gamma_c grid (below and above 1)."""
    return list(DEFAULT_GAMMA_RATIOS)
