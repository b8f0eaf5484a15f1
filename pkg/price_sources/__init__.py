"""
Price Sources Package

Resolves the value given to --prices into a PriceMatrix. Each source kind lives
in its own module:

- CSV files: a path to a file in the load_prices format (source_csv)
- Synthetic specs: strings such as "synth:factor:n=395,T=2500" that generate
  correlated random-walk prices on the fly (source_synth), so every experiment
  runs with zero external data
"""

from market_data import PriceMatrix
from price_sources.source_csv import csv_digest, load_csv_source
from price_sources.source_synth import (
    SYNTH_PREFIX,
    SynthSpec,
    is_synth_spec,
    load_synth_source,
    parse_synth_spec,
    synth_digest,
)


def load_price_source(source: str) -> PriceMatrix:
    """Load prices from a CSV path or a synth: spec string."""
    if is_synth_spec(source):
        return load_synth_source(source)
    return load_csv_source(source)


def source_digest(source: str) -> str:
    """SHA-256 identifying the input: file bytes for CSVs, the normalized spec for synth sources."""
    if is_synth_spec(source):
        return synth_digest(source)
    return csv_digest(source)


__all__ = [
    'SYNTH_PREFIX',
    'SynthSpec',
    'csv_digest',
    'is_synth_spec',
    'load_csv_source',
    'load_price_source',
    'load_synth_source',
    'parse_synth_spec',
    'source_digest',
    'synth_digest',
]
