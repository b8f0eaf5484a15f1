"""
Margin CLI

Command-line entry point for the margin-aware risk tools.

Commands:
    gamma-c     critical margin of one portfolio (JSON)
    optimize    spins, positions and risks at a given margin (JSON)
    sweep       relative risk of TAP and the local-field baseline vs gamma/gamma_c (CSV)
    scaling     mean critical margin vs portfolio size with a power-law fit (CSV)
    synth       synthetic correlated price file (CSV)
    histogram   pairwise price-correlation histogram (CSV)
    check       ground-state check of TAP below gamma_c (JSON)
    replay      re-run a recorded manifest and compare output digests

Every command except replay writes a RunManifest next to its output.

Exit codes:
    0 success, 1 replay mismatch, 2 argument error, 3 data error,
    4 numerical error (singular covariance, non-convex surrogate, oracle cap)

Usage:
    python margin_cli.py sweep --prices synth:factor:n=60,T=1000 --trials 16 --out sweep.csv
    python margin_cli.py replay --manifest sweep.csv.manifest.json
"""

import argparse
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from margin_config import (
    DEFAULT_FIELD_BOUND,
    DEFAULT_HISTOGRAM_BINS,
    DEFAULT_PORTFOLIO_SIZE,
    DEFAULT_SCALING_SIZES,
    DEFAULT_SCALING_TRIALS,
    DEFAULT_TRIALS,
    get_default_ratios,
    get_default_synth_spec,
    get_master_seed,
    get_workers,
)
from experiments import (
    SweepConfig,
    TheoremCheckConfig,
    correlation_histogram,
    run_margin_sweep,
    run_scaling,
    run_theorem_check,
)
from market_data import (
    RETURN_MODES,
    CorrelationModel,
    PriceDataError,
    SamplingScheme,
    apply_sampling,
    format_prices,
    synth_prices,
)
from portfolio_pipeline import SOLVERS, run_gamma_c, run_optimize
from price_sources import is_synth_spec, load_price_source, parse_synth_spec, source_digest
from reporting import console, render_csv, render_json, set_quiet
from risk_model import NotConvexError, SingularCovarianceError
from run_manifest import RunManifest, digest_text, load_manifest, save_manifest
from solvers import OracleCapError

EXIT_OK = 0
EXIT_REPLAY_MISMATCH = 1
EXIT_ARGUMENT = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

SCHEMES = ("eod1", "eod5", "eod1s5")

# Namespace entries that never enter a manifest
_RUNTIME_KEYS = {"command", "out", "manifest", "quiet"}

CommandResult = Tuple[str, Dict[str, str]]


def _float_list(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, e.g. '0.5,1.5', got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one number")
    return values


def _int_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, e.g. '8,16,32', got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _non_negative(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError(f"margin requirement must be >= 0, got {value}")
    return value


def _resolve_prices(args: argparse.Namespace) -> str:
    if args.prices is None:
        args.prices = get_default_synth_spec()
    if is_synth_spec(args.prices):
        args.prices = parse_synth_spec(args.prices).canonical()
    return args.prices


def _resolve_seed(args: argparse.Namespace) -> int:
    if args.seed is None:
        args.seed = get_master_seed()
    return args.seed


def _resolve_workers(args: argparse.Namespace) -> int:
    if getattr(args, "workers", None) is None:
        args.workers = get_workers()
    return args.workers


def _load(args: argparse.Namespace):
    source = _resolve_prices(args)
    return load_price_source(source), {source: source_digest(source)}


# ---------------------------------------------------------------------------
# Commands: each returns (primary output text, input digests)
# ---------------------------------------------------------------------------

def cmd_gamma_c(args: argparse.Namespace) -> CommandResult:
    source = _resolve_prices(args)
    seed = _resolve_seed(args)
    report = run_gamma_c(
        source,
        scheme=args.scheme,
        n=args.n,
        seed=seed,
        shrinkage=args.shrinkage,
        return_mode=args.return_mode,
        gamma=args.gamma,
    )
    return render_json(report), {source: source_digest(source)}


def cmd_optimize(args: argparse.Namespace) -> CommandResult:
    source = _resolve_prices(args)
    seed = _resolve_seed(args)
    report = run_optimize(
        source,
        gamma=args.gamma,
        solver=args.solver,
        returns=args.returns,
        scheme=args.scheme,
        n=args.n,
        seed=seed,
        shrinkage=args.shrinkage,
        return_mode=args.return_mode,
        warm_start=args.warm_start,
        update_order=args.update_order,
        max_sweeps=args.max_sweeps,
    )
    digests = {source: source_digest(source)}
    if args.returns and Path(args.returns).is_file():
        digests[args.returns] = source_digest(args.returns)
    return render_json(report), digests


def cmd_sweep(args: argparse.Namespace) -> CommandResult:
    prices, digests = _load(args)
    if args.ratios is None:
        args.ratios = get_default_ratios()
    cfg = SweepConfig(
        n=args.n,
        gamma_ratios=tuple(args.ratios),
        trials=args.trials,
        master_seed=_resolve_seed(args),
        field_bound=args.field_bound,
        scheme=SamplingScheme.from_label(args.scheme),
        return_mode=args.return_mode,
        shrinkage=args.shrinkage,
        update_order=args.update_order,
        max_sweeps=args.max_sweeps,
        warm_start=args.warm_start,
        workers=_resolve_workers(args),
    )
    rows = [
        (s.key, s.solver, s.mean_relative_risk, s.std_relative_risk, s.trials_defined)
        for s in run_margin_sweep(prices, cfg)
    ]
    columns = ["gamma_ratio", "solver", "mean_relative_risk", "std_relative_risk", "trials_defined"]
    return render_csv(columns, rows), digests


def cmd_scaling(args: argparse.Namespace) -> CommandResult:
    prices, digests = _load(args)
    scheme = SamplingScheme.from_label(args.scheme)
    fit = run_scaling(
        prices,
        args.sizes,
        args.trials,
        scheme,
        master_seed=_resolve_seed(args),
        shrinkage=args.shrinkage,
        return_mode=args.return_mode,
        workers=_resolve_workers(args),
    )
    rows = [(p.n, fit.scheme, p.gamma_c_mean, p.gamma_c_std, p.trials_used) for p in fit.points]
    footer = [f"alpha={fit.alpha!r}", f"r_squared={fit.r_squared!r}"]
    return render_csv(["n", "scheme", "gamma_c_mean", "gamma_c_std", "trials_used"], rows, footer), digests


def cmd_synth(args: argparse.Namespace) -> CommandResult:
    if args.model == "factor":
        model = CorrelationModel.factor(args.factors)
    else:
        model = CorrelationModel.uniform(args.rho)
    seed = _resolve_seed(args)
    console.print(f"🎲 Synthesizing {model.describe()} prices: n={args.n}, T={args.T}, seed={seed}")
    return format_prices(synth_prices(args.n, args.T, model, seed, daily_vol=args.vol)), {}


def cmd_histogram(args: argparse.Namespace) -> CommandResult:
    prices, digests = _load(args)
    hist = correlation_histogram(apply_sampling(prices, SamplingScheme.from_label(args.scheme)), args.bins)
    rows = [
        (float(hist.edges[i]), float(hist.edges[i + 1]), int(hist.counts[i]))
        for i in range(len(hist.counts))
    ]
    footer = [f"pairs_used={hist.pairs_used}", f"pairs_excluded={hist.pairs_excluded}"]
    return render_csv(["bin_left", "bin_right", "count"], rows, footer), digests


def cmd_check(args: argparse.Namespace) -> CommandResult:
    cfg = TheoremCheckConfig(
        instances=args.instances,
        min_n=args.min_n,
        max_n=args.max_n,
        ratio_low=args.ratio_low,
        ratio_high=args.ratio_high,
        factors=args.factors,
        n_obs=args.T,
        count_minima=not args.skip_minima,
        master_seed=_resolve_seed(args),
        workers=_resolve_workers(args),
    )
    return render_json(run_theorem_check(cfg).as_dict()), {}


COMMANDS: Dict[str, Callable[[argparse.Namespace], CommandResult]] = {
    "gamma-c": cmd_gamma_c,
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "scaling": cmd_scaling,
    "synth": cmd_synth,
    "histogram": cmd_histogram,
    "check": cmd_check,
}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_output_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", help="write the primary output here instead of stdout")
    parser.add_argument("--manifest", help="manifest path (default: <out>.manifest.json or $MARGIN_MANIFEST_DIR)")
    parser.add_argument("--quiet", action="store_true", help="silence status lines on stderr")
    parser.add_argument("--seed", type=int, help="master seed (default: $MARGIN_MASTER_SEED)")


def _add_data_options(parser: argparse.ArgumentParser, selection: bool = False) -> None:
    parser.add_argument("--prices", help="CSV price file or synth: spec (default: $MARGIN_SYNTH_SPEC)")
    parser.add_argument("--scheme", choices=SCHEMES, default="eod1", help="end-of-day sampling scheme")
    parser.add_argument("--shrinkage", type=float, default=0.0, help="covariance shrinkage in [0, 1)")
    parser.add_argument("--return-mode", choices=RETURN_MODES, default="log")
    if selection:
        parser.add_argument("--n", type=int, help="select this many assets at random (default: all)")


def _add_tap_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--warm-start", action="store_true", help="start TAP from the local-field baseline")
    parser.add_argument("--update-order", choices=("random", "sequential"), default="random")
    parser.add_argument("--max-sweeps", type=int, help="TAP sweep limit (default: 10 n + 100)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="margin_cli",
        description="Margin-aware portfolio risk minimization via the Ising mapping",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("gamma-c", help="critical margin of one portfolio")
    _add_data_options(p, selection=True)
    p.add_argument("--gamma", type=_non_negative, help="also report the Hessian at this margin")
    _add_output_options(p)

    p = subparsers.add_parser("optimize", help="solve one portfolio at a given margin")
    _add_data_options(p, selection=True)
    p.add_argument("--gamma", type=_non_negative, required=True)
    p.add_argument("--solver", choices=SOLVERS, default="tap")
    p.add_argument("--returns", help="expected returns: 'r1,r2,...' or a ticker,expected_return CSV")
    _add_tap_options(p)
    _add_output_options(p)

    p = subparsers.add_parser("sweep", help="relative risk vs gamma/gamma_c")
    _add_data_options(p)
    p.add_argument("--n", type=int, default=DEFAULT_PORTFOLIO_SIZE)
    p.add_argument("--ratios", type=_float_list, help="gamma/gamma_c grid, e.g. '0.25,0.5,1.5'")
    p.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    p.add_argument("--field-bound", type=float, default=DEFAULT_FIELD_BOUND)
    p.add_argument("--workers", type=int)
    _add_tap_options(p)
    _add_output_options(p)

    p = subparsers.add_parser("scaling", help="critical margin vs portfolio size")
    _add_data_options(p)
    p.add_argument("--sizes", type=_int_list, default=list(DEFAULT_SCALING_SIZES))
    p.add_argument("--trials", type=int, default=DEFAULT_SCALING_TRIALS)
    p.add_argument("--workers", type=int)
    _add_output_options(p)

    p = subparsers.add_parser("synth", help="write a synthetic price file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--model", choices=("factor", "uniform"), default="factor")
    p.add_argument("--factors", type=int, default=3)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--vol", type=float, default=0.02)
    _add_output_options(p)

    p = subparsers.add_parser("histogram", help="pairwise price-correlation histogram")
    _add_data_options(p)
    p.add_argument("--bins", type=int, default=DEFAULT_HISTOGRAM_BINS)
    _add_output_options(p)

    p = subparsers.add_parser("check", help="TAP vs exhaustive search below gamma_c")
    p.add_argument("--instances", type=int, default=500)
    p.add_argument("--min-n", type=int, default=4)
    p.add_argument("--max-n", type=int, default=14)
    p.add_argument("--ratio-low", type=float, default=0.05)
    p.add_argument("--ratio-high", type=float, default=0.95)
    p.add_argument("--factors", type=int, default=3)
    p.add_argument("--T", type=int, default=500)
    p.add_argument("--skip-minima", action="store_true", help="skip counting local minima")
    p.add_argument("--workers", type=int)
    _add_output_options(p)

    p = subparsers.add_parser("replay", help="re-run a manifest and compare output digests")
    p.add_argument("--manifest", required=True)
    p.add_argument("--quiet", action="store_true")

    return parser


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------

def _emit(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(out).write_text(text, encoding="utf-8", newline="")
        console.print(f"📝 Wrote {out}")


def _config_of(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _RUNTIME_KEYS}


def run_command(args: argparse.Namespace) -> int:
    _resolve_seed(args)
    text, digests = COMMANDS[args.command](args)
    _emit(text, args.out)
    manifest = RunManifest(
        command=args.command,
        config=_config_of(args),
        master_seed=args.seed,
        input_digests=digests,
        output_digest=digest_text(text),
    )
    save_manifest(manifest, path=args.manifest, out=args.out)
    return EXIT_OK


def replay(manifest_path: str) -> int:
    """Re-run a recorded command in memory; exit 0 when the output digest matches."""
    manifest = load_manifest(manifest_path)
    if manifest.command not in COMMANDS:
        raise ValueError(f"manifest records unknown command {manifest.command!r}")
    args = argparse.Namespace(command=manifest.command, out=None, manifest=None, quiet=True, **manifest.config)
    text, digests = COMMANDS[manifest.command](args)

    for source, recorded in manifest.input_digests.items():
        if digests.get(source) != recorded:
            console.print(f"⚠️  Input {source} changed since the run was recorded")
    actual = digest_text(text)
    if actual != manifest.output_digest:
        console.print(f"❌ Replay mismatch: recorded {manifest.output_digest[:12]}, got {actual[:12]}")
        return EXIT_REPLAY_MISMATCH
    console.print(f"✅ Replay of {manifest.command} reproduced {actual[:12]}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_ARGUMENT
    set_quiet(args.quiet)

    try:
        if args.command == "replay":
            return replay(args.manifest)
        return run_command(args)
    except (PriceDataError, FileNotFoundError) as e:
        console.print(f"❌ Data error: {e}")
        return EXIT_DATA
    except (SingularCovarianceError, NotConvexError, OracleCapError) as e:
        console.print(f"❌ Numerical error: {e}")
        return EXIT_NUMERICAL
    except ValueError as e:
        console.print(f"❌ Argument error: {e}")
        return EXIT_ARGUMENT


if __name__ == "__main__":
    sys.exit(main())
