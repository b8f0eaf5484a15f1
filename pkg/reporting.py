"""
Reporting helpers: the shared status console and the renderers that turn
experiment results into CSV/JSON text.

Status lines go to stderr so that stdout only ever carries machine-readable
output. Every float is written with repr(), the shortest string that parses
back to the identical double, so outputs round-trip and diff cleanly.
"""

import json
import math
import numbers
from typing import Any, Iterable, List, Sequence

import numpy as np
import pandas as pd
from rich.console import Console

console = Console(stderr=True, highlight=False)


def set_quiet(quiet: bool) -> None:
    """Silence (or re-enable) status lines."""
    console.quiet = quiet


def format_number(value: Any) -> str:
    """
    Format a number at full round-trip precision.

    Infinity and NaN render as "inf", "-inf" and "nan".

    Example:
        >>> format_number(0.1)
        '0.1'
        >>> format_number(float("inf"))
        'inf'
    """
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, numbers.Integral):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(value)


def to_jsonable(value: Any) -> Any:
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if hasattr(value, "tolist") and not isinstance(value, (str, bytes)):
        value = value.tolist()
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, bool) or value is None or isinstance(value, (int, str)):
        return value
    if isinstance(value, float):
        return value if math.isfinite(value) else format_number(value)
    return value


def render_json(payload: Any) -> str:
    """Stable JSON rendering (sorted keys, trailing newline)."""
    return json.dumps(to_jsonable(payload), indent=2, sort_keys=True) + "\n"


def render_csv(columns: Sequence[str], rows: Iterable[Sequence[Any]], footer: List[str] = None) -> str:
    """
    Render rows as CSV text with every numeric cell formatted by format_number.

    Footer lines are appended verbatim after the table, each prefixed with "#".
    """
    formatted = [
        [cell if isinstance(cell, str) else format_number(cell) for cell in row]
        for row in rows
    ]
    frame = pd.DataFrame(formatted, columns=list(columns), dtype=object)
    text = frame.to_csv(index=False, lineterminator="\n")
    for line in footer or []:
        text += f"# {line}\n"
    return text
