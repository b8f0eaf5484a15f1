"""
CSV Price Source

Reads a user-supplied end-of-day price file (see market_data for the format).
"""

import hashlib
from pathlib import Path

from market_data import PriceDataError, PriceMatrix, load_prices


def load_csv_source(path: str) -> PriceMatrix:
    """Load a CSV price file; missing or unreadable files raise PriceDataError."""
    return load_prices(path)


def csv_digest(path: str) -> str:
    """SHA-256 of the file bytes."""
    csv_path = Path(path)
    try:
        data = csv_path.read_bytes()
    except OSError as e:
        raise PriceDataError(f"could not read {csv_path}: {e}")
    return hashlib.sha256(data).hexdigest()
