"""
Portfolio Pipeline

The single-portfolio commands (gamma-c and optimize) as linear LangGraph
pipelines over a shared TypedDict state:

    load_price_data -> estimate_precision -> report_margin
    load_price_data -> estimate_precision -> build_instance -> solve_spins -> summarize_positions

Key Patterns:
1. Each node reads what it needs from the state and returns only the keys it adds
2. Graphs are compiled on demand, so importing this module has no side effects
3. Domain errors (PriceDataError, SingularCovarianceError, OracleCapError) propagate
   out of invoke() unchanged; the CLI maps them to exit codes
"""

import math
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd
from langgraph.graph import END, START, StateGraph
from typing_extensions import TypedDict

from experiments import trial_seed
from market_data import (
    PriceDataError,
    PriceMatrix,
    SamplingScheme,
    apply_sampling,
    compute_returns,
    select_assets,
)
from price_sources import load_price_source
from reporting import console
from risk_model import (
    IsingInstance,
    PortfolioProblem,
    critical_margin,
    estimate_covariance,
    hessian_critical_margin,
    hessian_min_eigenvalue,
    invert_covariance,
    laplacian,
)
from solvers import (
    SolveReport,
    TapSettings,
    exhaustive_ground_state,
    is_local_minimum,
    local_field_baseline,
    random_spins,
    relaxed_solve,
    tap_solve,
)

SOLVERS = ("tap", "exhaustive", "baseline", "relaxed")

# independent random streams spawned from the one --seed
SELECTION_STREAM = 0
START_STREAM = 1
ORDER_STREAM = 2


class State(TypedDict, total=False):
    # inputs
    prices_source: str
    scheme: str
    n: Optional[int]
    seed: int
    shrinkage: float
    return_mode: str
    gamma: Optional[float]
    solver: str
    returns: Optional[str]
    warm_start: bool
    update_order: str
    max_sweeps: Optional[int]
    # filled in by the nodes
    prices: PriceMatrix
    C: np.ndarray
    Cinv: np.ndarray
    Delta: np.ndarray
    gamma_c: float
    problem: PortfolioProblem
    instance: IsingInstance
    solve: SolveReport
    report: Dict[str, Any]


def parse_expected_returns(spec: Optional[str], tickers, historical: np.ndarray) -> np.ndarray:
    """
    Resolve the expected-return vector.

    spec may be:
        None                  - historical mean return of each asset
        "0.01,-0.02,0.005"    - one value per selected asset, in column order
        a CSV path            - columns ticker,expected_return; every selected
                                ticker must appear

    Raises:
        ValueError: wrong length or unparsable vector
        PriceDataError: CSV missing a ticker or malformed
    """
    n = len(tickers)
    if spec is None or spec.strip() == "":
        return np.asarray(historical, dtype=float)

    path = Path(spec)
    if path.suffix.lower() == ".csv" or path.exists():
        try:
            frame = pd.read_csv(path, dtype={"ticker": str})
        except (OSError, pd.errors.ParserError) as e:
            raise PriceDataError(f"could not read expected returns from {path}: {e}")
        if list(frame.columns[:2]) != ["ticker", "expected_return"]:
            raise PriceDataError(
                f"{path} must have columns ticker,expected_return, got {list(frame.columns)}"
            )
        lookup = dict(zip(frame["ticker"], pd.to_numeric(frame["expected_return"], errors="coerce")))
        missing = [t for t in tickers if t not in lookup]
        if missing:
            raise PriceDataError(f"{path} has no expected return for {missing}")
        r = np.array([lookup[t] for t in tickers], dtype=float)
        if not np.all(np.isfinite(r)):
            raise PriceDataError(f"{path} contains non-numeric expected returns")
        return r

    try:
        r = np.array([float(v) for v in spec.split(",")], dtype=float)
    except ValueError:
        raise ValueError(f"expected returns must be comma-separated numbers, e.g. '0.01,-0.02', got {spec!r}")
    if r.shape != (n,):
        raise ValueError(f"got {r.size} expected returns for {n} assets")
    return r


# ---------------------------------------------------------------------------
# Nodes
# ---------------------------------------------------------------------------

def load_price_data(state: State) -> dict:
    prices = load_price_source(state["prices_source"])
    prices = apply_sampling(prices, SamplingScheme.from_label(state.get("scheme", "eod1")))
    n = state.get("n")
    if n is not None:
        prices = select_assets(prices, n, trial_seed(state.get("seed", 0), SELECTION_STREAM))
    console.print(f"📈 Portfolio of {prices.n_assets} assets over {prices.n_obs} rows")
    return {"prices": prices}


def estimate_precision(state: State) -> dict:
    returns = compute_returns(state["prices"], state.get("return_mode", "log"))
    estimate = estimate_covariance(returns)
    Cinv = invert_covariance(estimate.C, state.get("shrinkage", 0.0))
    Delta = laplacian(Cinv)
    return {"C": estimate.C, "Cinv": Cinv, "Delta": Delta, "gamma_c": critical_margin(Delta)}


def build_instance(state: State) -> dict:
    """Ising instance at the requested margin (skipped when no margin was given)."""
    gamma = state.get("gamma")
    if gamma is None:
        return {}
    if gamma < 0:
        raise ValueError(f"margin requirement gamma must be >= 0, got {gamma}")
    prices = state["prices"]
    returns = compute_returns(prices, state.get("return_mode", "log"))
    historical = returns.returns.mean(axis=0)
    r = parse_expected_returns(state.get("returns"), prices.tickers, historical)
    problem = PortfolioProblem(state["C"], state["Cinv"], r, gamma)
    return {"problem": problem, "instance": problem.to_ising()}


def report_margin(state: State) -> dict:
    Delta = state["Delta"]
    gamma_c = state["gamma_c"]
    report: Dict[str, Any] = {
        "n": int(Delta.shape[0]),
        "gamma_c": gamma_c,
        "hessian_critical_margin": hessian_critical_margin(Delta),
        "tickers": list(state["prices"].tickers),
    }
    gamma = state.get("gamma")
    if gamma is not None:
        report["gamma"] = gamma
        report["hessian_min_eigenvalue"] = hessian_min_eigenvalue(Delta, gamma)
        report["verdict"] = "convex" if gamma < gamma_c else "non-convex"
    return {"report": report}


def solve_spins(state: State) -> dict:
    inst = state["instance"]
    solver = state.get("solver", "tap")
    seed = state.get("seed", 0)
    if solver == "tap":
        if state.get("warm_start"):
            start = local_field_baseline(inst).s
        else:
            start = random_spins(inst.n, trial_seed(seed, START_STREAM))
        settings = TapSettings(
            max_sweeps=state.get("max_sweeps"),
            update_order=state.get("update_order", "random"),
            seed=trial_seed(seed, ORDER_STREAM),
        )
        result = tap_solve(inst, start, settings)
    else:
        if solver == "exhaustive":
            config = exhaustive_ground_state(inst)
        elif solver == "baseline":
            config = local_field_baseline(inst)
        elif solver == "relaxed":
            config = relaxed_solve(inst)
        else:
            raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVERS}")
        result = SolveReport(config, True, 0, 0, is_local_minimum(inst, config.s))
    console.print(f"🧭 {solver} solver: spin risk {result.config.risk!r}")
    return {"solve": result}


def summarize_positions(state: State) -> dict:
    problem = state["problem"]
    inst = state["instance"]
    result = state["solve"]
    s = result.config.s
    positions = problem.positions(s)
    consistent = positions.sign_consistency(s)
    report = {
        "n": inst.n,
        "tickers": list(state["prices"].tickers),
        "gamma": inst.gamma,
        "gamma_c": inst.gamma_c,
        "gamma_ratio": inst.gamma_ratio if not math.isinf(inst.gamma_c) else 0.0,
        "solver": state.get("solver", "tap"),
        "spins": result.config.as_ints(),
        "spin_risk": result.config.risk,
        "positions": positions.p,
        "position_risk": problem.risk(positions, s),
        "position_risk_offset": problem.risk_offset,
        "expected_return": problem.expected_return(positions),
        "sign_consistent": consistent,
        "all_signs_consistent": bool(np.all(consistent)),
        "diagnostics": {
            "converged": result.converged,
            "sweeps": result.sweeps_used,
            "flips": result.flips,
            "local_minimum": result.is_local_min,
        },
    }
    if not report["all_signs_consistent"]:
        console.print(f"⚠️  {int(np.sum(~consistent))} position(s) disagree in sign with their spin")
    return {"report": report}


# ---------------------------------------------------------------------------
# Graphs
# ---------------------------------------------------------------------------

def build_gamma_c_graph():
    graph_builder = StateGraph(State)
    graph_builder.add_node("load_price_data", load_price_data)
    graph_builder.add_node("estimate_precision", estimate_precision)
    graph_builder.add_node("report_margin", report_margin)
    graph_builder.add_edge(START, "load_price_data")
    graph_builder.add_edge("load_price_data", "estimate_precision")
    graph_builder.add_edge("estimate_precision", "report_margin")
    graph_builder.add_edge("report_margin", END)
    return graph_builder.compile()


def build_optimize_graph():
    graph_builder = StateGraph(State)
    graph_builder.add_node("load_price_data", load_price_data)
    graph_builder.add_node("estimate_precision", estimate_precision)
    graph_builder.add_node("build_instance", build_instance)
    graph_builder.add_node("solve_spins", solve_spins)
    graph_builder.add_node("summarize_positions", summarize_positions)
    graph_builder.add_edge(START, "load_price_data")
    graph_builder.add_edge("load_price_data", "estimate_precision")
    graph_builder.add_edge("estimate_precision", "build_instance")
    graph_builder.add_edge("build_instance", "solve_spins")
    graph_builder.add_edge("solve_spins", "summarize_positions")
    graph_builder.add_edge("summarize_positions", END)
    return graph_builder.compile()


def run_gamma_c(
    prices_source: str,
    scheme: str = "eod1",
    n: Optional[int] = None,
    seed: int = 0,
    shrinkage: float = 0.0,
    return_mode: str = "log",
    gamma: Optional[float] = None,
) -> Dict[str, Any]:
    """
    Critical margin of one portfolio, plus the convexity verdict at gamma if given.

    Example:
        >>> run_gamma_c("synth:factor:n=8,T=500", gamma=0.01)["verdict"]
        'convex'
    """
    if gamma is not None and gamma < 0:
        raise ValueError(f"margin requirement gamma must be >= 0, got {gamma}")
    state = build_gamma_c_graph().invoke({
        "prices_source": prices_source,
        "scheme": scheme,
        "n": n,
        "seed": seed,
        "shrinkage": shrinkage,
        "return_mode": return_mode,
        "gamma": gamma,
    })
    return state["report"]


def run_optimize(
    prices_source: str,
    gamma: float,
    solver: str = "tap",
    returns: Optional[str] = None,
    scheme: str = "eod1",
    n: Optional[int] = None,
    seed: int = 0,
    shrinkage: float = 0.0,
    return_mode: str = "log",
    warm_start: bool = False,
    update_order: str = "random",
    max_sweeps: Optional[int] = None,
) -> Dict[str, Any]:
    """Solve one portfolio at margin gamma and report spins, positions and risks."""
    if gamma is None or gamma < 0:
        raise ValueError(f"margin requirement gamma must be >= 0, got {gamma}")
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVERS}")
    state = build_optimize_graph().invoke({
        "prices_source": prices_source,
        "scheme": scheme,
        "n": n,
        "seed": seed,
        "shrinkage": shrinkage,
        "return_mode": return_mode,
        "gamma": gamma,
        "solver": solver,
        "returns": returns,
        "warm_start": warm_start,
        "update_order": update_order,
        "max_sweeps": max_sweeps,
    })
    return state["report"]
