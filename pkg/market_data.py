"""
Market Data Module

Ingests, samples, smooths and synthesizes end-of-day price series and derives
the return series used for covariance estimation.

Key Patterns:
1. Immutable value objects: PriceMatrix validates itself on construction
2. Pure functions: every operation is a function of its inputs (seed included)
3. Drop, don't impute: incomplete rows are removed at load and counted

CSV price format:
    date,AAA,BBB
    2009-02-02,12.5,40.1
    2009-02-03,12.7,39.8

The first column is `date` (ISO-8601), every other column is one ticker.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Tuple, Union

import numpy as np
import pandas as pd

from reporting import console

SeedLike = Union[int, np.random.SeedSequence]
ReturnMode = Literal["log", "simple", "price"]
RETURN_MODES = ("log", "simple", "price")


class PriceDataError(ValueError):
    """Raised when a price file or price matrix violates the data contract."""


@dataclass(frozen=True)
class PriceMatrix:
    """
    Dated asset price series: T observations x n assets.

    Invariants: T >= 2, n >= 1, every price > 0, dates strictly increasing,
    no missing cells.
    """

    dates: np.ndarray
    tickers: Tuple[str, ...]
    prices: np.ndarray
    dropped_rows: int = 0

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        prices = np.array(self.prices, dtype=float)
        tickers = tuple(str(t) for t in self.tickers)

        if prices.ndim != 2:
            raise PriceDataError(f"prices must be a T x n matrix, got shape {prices.shape}")
        n_obs, n_assets = prices.shape
        if n_obs < 2:
            raise PriceDataError(f"need at least 2 observations, got {n_obs}")
        if n_assets < 1 or len(tickers) != n_assets:
            raise PriceDataError(f"{len(tickers)} tickers for {n_assets} price columns")
        if len(set(tickers)) != len(tickers):
            raise PriceDataError("ticker labels must be unique")
        if dates.shape != (n_obs,):
            raise PriceDataError(f"{dates.shape[0]} dates for {n_obs} price rows")
        if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
            raise PriceDataError("every price must be a finite positive number")
        if np.any(np.isnat(dates)):
            raise PriceDataError("every row needs a date")
        if np.any(np.diff(dates) <= np.timedelta64(0, "D")):
            raise PriceDataError("dates must be strictly increasing")

        prices.setflags(write=False)
        dates.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "tickers", tickers)

    @property
    def n_obs(self) -> int:
        return self.prices.shape[0]

    @property
    def n_assets(self) -> int:
        return self.prices.shape[1]

    def to_frame(self) -> pd.DataFrame:
        """Prices as a DataFrame indexed by an ISO date column named `date`."""
        frame = pd.DataFrame(self.prices, columns=list(self.tickers))
        frame.insert(0, "date", pd.to_datetime(self.dates).strftime("%Y-%m-%d"))
        return frame

    def take_columns(self, columns: np.ndarray) -> "PriceMatrix":
        return PriceMatrix(
            self.dates,
            tuple(self.tickers[c] for c in columns),
            self.prices[:, columns],
            self.dropped_rows,
        )


@dataclass(frozen=True)
class SamplingScheme:
    """
    How end-of-day rows are selected before estimation.

    kind:
        every_day      - identity (EOD1)
        every_k_days   - keep rows 0, k, 2k, ... (EOD5 for k = 5)
        boxcar         - trailing mean over w trading days (EOD1s5 for w = 5)
    """

    kind: Literal["every_day", "every_k_days", "boxcar"] = "every_day"
    parameter: int = 1

    def __post_init__(self):
        if self.kind not in ("every_day", "every_k_days", "boxcar"):
            raise ValueError(f"unknown sampling kind {self.kind!r}")
        if not isinstance(self.parameter, (int, np.integer)) or self.parameter < 1:
            raise ValueError(f"sampling parameter must be a positive integer, got {self.parameter!r}")

    @classmethod
    def every_day(cls) -> "SamplingScheme":
        return cls("every_day", 1)

    @classmethod
    def every_k_days(cls, k: int) -> "SamplingScheme":
        return cls("every_k_days", k)

    @classmethod
    def boxcar(cls, window: int) -> "SamplingScheme":
        return cls("boxcar", window)

    @classmethod
    def from_label(cls, label: str) -> "SamplingScheme":
        """
        Parse the scheme labels used on the command line.

        Example:
            >>> SamplingScheme.from_label("eod5")
            SamplingScheme(kind='every_k_days', parameter=5)
        """
        key = label.strip().lower()
        if key == "eod1":
            return cls.every_day()
        if key.startswith("eod1s") and key[5:].isdigit():
            return cls.boxcar(int(key[5:]))
        if key.startswith("eod") and key[3:].isdigit():
            return cls.every_k_days(int(key[3:]))
        raise ValueError(f"unknown sampling scheme {label!r}; expected eod1, eod5 or eod1s5")

    @property
    def label(self) -> str:
        if self.kind == "every_day":
            return "EOD1"
        if self.kind == "every_k_days":
            return f"EOD{self.parameter}"
        return f"EOD1s{self.parameter}"


@dataclass(frozen=True)
class ReturnMatrix:
    """Return series derived from a PriceMatrix; `price` mode copies the prices."""

    returns: np.ndarray
    mode: str
    tickers: Tuple[str, ...] = field(default=())

    @property
    def n_obs(self) -> int:
        return self.returns.shape[0]

    @property
    def n_assets(self) -> int:
        return self.returns.shape[1]


@dataclass(frozen=True)
class CorrelationModel:
    """
    Population correlation structure for synthetic log returns.

    factor(f):   r = B z + e with standard-normal loadings B (n x f), so pairwise
                 correlations carry both signs.
    uniform(rho): every pair correlates at rho; needs -1/(n-1) < rho < 1.
    """

    kind: Literal["factor", "uniform"]
    factors: int = 3
    rho: float = 0.0

    @classmethod
    def factor(cls, factors: int) -> "CorrelationModel":
        if factors < 1:
            raise ValueError(f"factor model needs at least one factor, got {factors}")
        return cls("factor", factors=int(factors))

    @classmethod
    def uniform(cls, rho: float) -> "CorrelationModel":
        return cls("uniform", rho=float(rho))

    def describe(self) -> str:
        if self.kind == "factor":
            return f"factor(f={self.factors})"
        return f"uniform(rho={self.rho!r})"


def _parse_price(text: str) -> float:
    # exact inverse of repr() for finite values
    try:
        return float(text.strip())
    except ValueError:
        return np.nan


def load_prices(path: Union[str, Path]) -> PriceMatrix:
    """
    Load a CSV price file.

    Rows with a blank date or any missing, unparseable or non-positive price
    are dropped and counted in `dropped_rows`.

    Raises:
        PriceDataError: unreadable file, bad header, duplicate or non-increasing
            dates, or fewer than 2 clean rows
    """
    csv_path = Path(path)
    if not csv_path.is_file():
        raise PriceDataError(f"price file not found: {csv_path}")
    try:
        frame = pd.read_csv(csv_path, encoding="utf-8", dtype=str, keep_default_na=False)
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise PriceDataError(f"could not read {csv_path}: {e}")

    if frame.shape[1] < 2 or frame.columns[0].strip().lower() != "date":
        raise PriceDataError(f"{csv_path}: header must be 'date' followed by ticker columns")

    try:
        dates = pd.to_datetime(frame.iloc[:, 0].str.strip(), format="ISO8601")
    except (ValueError, TypeError) as e:
        raise PriceDataError(f"{csv_path}: unparseable date column ({e})")
    dated = dates.notna()
    if dates[dated].duplicated().any():
        first = dates[dated][dates[dated].duplicated()].iloc[0].strftime("%Y-%m-%d")
        raise PriceDataError(f"{csv_path}: duplicate date {first}")

    values = frame.iloc[:, 1:].apply(lambda col: col.map(_parse_price))
    # a blank date cell is a gap like a blank price
    clean = (
        dated
        & values.notna().all(axis=1)
        & (values > 0).all(axis=1)
        & np.isfinite(values).all(axis=1)
    )
    dropped = int((~clean).sum())
    if clean.sum() < 2:
        raise PriceDataError(f"{csv_path}: fewer than 2 complete rows after dropping {dropped}")

    day_values = dates[clean].to_numpy().astype("datetime64[D]")
    if np.any(np.diff(day_values) <= np.timedelta64(0, "D")):
        raise PriceDataError(f"{csv_path}: dates must be strictly increasing")

    tickers = tuple(c.strip() for c in frame.columns[1:])
    matrix = PriceMatrix(day_values, tickers, values[clean].to_numpy(dtype=float), dropped)
    console.print(f"📈 Loaded {csv_path.name}: T={matrix.n_obs}, n={matrix.n_assets} (dropped {dropped} rows)")
    return matrix


def format_prices(prices: PriceMatrix) -> str:
    """Prices as CSV text in the load_prices format at full round-trip precision."""
    return prices.to_frame().to_csv(index=False, lineterminator="\n")


def write_prices(prices: PriceMatrix, path: Union[str, Path]) -> None:
    Path(path).write_text(format_prices(prices), encoding="utf-8")


def apply_sampling(prices: PriceMatrix, scheme: SamplingScheme) -> PriceMatrix:
    """
    Apply an end-of-day sampling scheme.

    every_k_days keeps rows 0, k, 2k, ...; boxcar(w) replaces each price by the
    mean of the trailing w rows, with the window truncated at the series start.

    Raises:
        PriceDataError: fewer than 2 rows remain
    """
    if scheme.kind == "every_day":
        return prices

    if scheme.kind == "every_k_days":
        rows = np.arange(0, prices.n_obs, scheme.parameter)
        if rows.size < 2:
            raise PriceDataError(
                f"sampling every {scheme.parameter} days leaves {rows.size} row(s) of {prices.n_obs}"
            )
        return PriceMatrix(prices.dates[rows], prices.tickers, prices.prices[rows], prices.dropped_rows)

    if scheme.parameter == 1:
        return prices
    smoothed = (
        pd.DataFrame(prices.prices)
        .rolling(window=scheme.parameter, min_periods=1)
        .mean()
        .to_numpy()
    )
    return PriceMatrix(prices.dates, prices.tickers, smoothed, prices.dropped_rows)


def compute_returns(prices: PriceMatrix, mode: str = "log") -> ReturnMatrix:
    """
    Derive returns.

    log:    ln(p[t+1] / p[t])
    simple: p[t+1] / p[t] - 1
    price:  the price levels themselves (for price-level correlations)
    """
    if mode not in RETURN_MODES:
        raise ValueError(f"unknown return mode {mode!r}; expected one of {RETURN_MODES}")
    levels = prices.prices
    if mode == "log":
        data = np.diff(np.log(levels), axis=0)
    elif mode == "simple":
        data = levels[1:] / levels[:-1] - 1.0
    else:
        data = levels.copy()
    return ReturnMatrix(data, mode, prices.tickers)


def select_assets(prices: PriceMatrix, n: int, seed: SeedLike) -> PriceMatrix:
    """
    Pick a uniformly random n-subset of the tickers, without replacement.

    The result is a deterministic function of (universe, n, seed); columns
    appear in selection order.
    """
    if n < 1:
        raise ValueError(f"portfolio size must be positive, got {n}")
    if n > prices.n_assets:
        raise ValueError(f"cannot select {n} assets from a universe of {prices.n_assets}")
    rng = np.random.default_rng(seed)
    columns = rng.choice(prices.n_assets, size=n, replace=False)
    return prices.take_columns(columns)


def synth_prices(
    n: int,
    n_obs: int,
    model: CorrelationModel,
    seed: SeedLike,
    daily_vol: float = 0.02,
    start_date: str = "2000-01-03",
) -> PriceMatrix:
    """
    Generate geometric random-walk prices with a prescribed log-return correlation.

    Args:
        n: Number of assets
        n_obs: Number of price rows T (T - 1 log returns)
        model: Population correlation model for the log returns
        seed: Seed or SeedSequence; equal seeds give identical matrices
        daily_vol: Standard deviation of each asset's daily log return
        start_date: First business day of the series

    Raises:
        ValueError: n < 1, T < 2, or rho outside (-1/(n-1), 1)
    """
    if n < 1 or n_obs < 2:
        raise ValueError(f"need n >= 1 and T >= 2, got n={n}, T={n_obs}")

    rng = np.random.default_rng(seed)
    steps = n_obs - 1

    if model.kind == "uniform":
        rho = model.rho
        lower = -1.0 / (n - 1) if n > 1 else -np.inf
        if not (lower < rho < 1.0):
            raise ValueError(f"uniform correlation rho={rho} must lie in ({lower}, 1) for n={n}")
        corr = np.full((n, n), rho)
        np.fill_diagonal(corr, 1.0)
        chol = np.linalg.cholesky(corr)
        shocks = rng.standard_normal((steps, n)) @ chol.T
    else:
        loadings = rng.standard_normal((n, model.factors))
        idiosyncratic = np.sqrt(model.factors)
        common = rng.standard_normal((steps, model.factors)) @ loadings.T
        specific = idiosyncratic * rng.standard_normal((steps, n))
        scale = np.sqrt(np.sum(loadings ** 2, axis=1) + idiosyncratic ** 2)
        shocks = (common + specific) / scale

    start_levels = rng.uniform(20.0, 200.0, size=n)
    log_paths = np.vstack([np.zeros(n), np.cumsum(daily_vol * shocks, axis=0)])
    levels = start_levels * np.exp(log_paths)

    dates = pd.bdate_range(start=start_date, periods=n_obs).to_numpy().astype("datetime64[D]")
    width = len(str(n))
    tickers = tuple(f"S{i:0{width}d}" for i in range(n))
    return PriceMatrix(dates, tickers, levels)
