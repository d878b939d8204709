"""Command-line interface.

Subcommands:
  run         execute an optimizer from a config file (or all defaults)
  sample-grf  draw Gaussian random-field realizations to a CSV
  rates       re-fit convergence rates from an existing run log
  preset      run a canned desk-scale experiment sequence

Exit codes: 0 success, 2 configuration/usage error, 3 solver or estimation
failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .mesh import GridLevel
from .mlmc import EstimationError
from .pde import SolverError
from .randfield import MaternParams, build_embedding, mix_seed, sample_field
from .rates import estimate_delta
from .runner import (
    PRESETS,
    ConfigError,
    RunConfig,
    load_config,
    parse_csv_log,
    run,
    run_preset,
    summary_fits,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlsgd",
        description="Batched and multilevel stochastic gradient descent "
        "for elliptic optimal control under log-normal coefficient "
        "uncertainty.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an optimizer and write a CSV log")
    p_run.add_argument("--config", type=Path, default=None,
                       help="flat key = value config file (defaults apply when omitted)")
    p_run.add_argument("--seed", type=int, default=None, help="override root_seed")
    p_run.add_argument("--workers", type=int, default=None, help="override workers")
    p_run.add_argument("--out", type=Path, default=None, help="override the CSV output path")

    p_grf = sub.add_parser("sample-grf", help="sample random-field realizations to CSV")
    p_grf.add_argument("--exponent", type=int, default=5,
                       help="mesh exponent: the grid has (2^e + 1)^2 nodes (default 5)")
    p_grf.add_argument("--samples", type=int, default=1, help="number of realizations")
    p_grf.add_argument("--seed", type=int, default=0, help="root seed")
    p_grf.add_argument("--sigma2", type=float, default=1.5, help="marginal variance")
    p_grf.add_argument("--nu", type=float, default=1.0, help="smoothness")
    p_grf.add_argument("--lambda-kappa", type=float, default=0.1, dest="lambda_kappa",
                       help="correlation length")
    p_grf.add_argument("--out", type=Path, default=Path("grf.csv"), help="output CSV path")

    p_rates = sub.add_parser("rates", help="re-fit convergence rates from a run log")
    p_rates.add_argument("--in", dest="input", type=Path, required=True,
                         help="CSV log produced by 'mlsgd run'")
    p_rates.add_argument("--burn-in-frac", type=float, default=0.05,
                         help="fraction of the total cost excluded from the "
                         "resource-rate regression (default 0.05)")

    p_preset = sub.add_parser("preset", help="run a canned experiment sequence")
    p_preset.add_argument("name", choices=sorted(PRESETS), help="preset name")
    p_preset.add_argument("--out-dir", type=Path, default=Path("."),
                          help="directory for the CSV logs")
    p_preset.add_argument("--seed", type=int, default=0, help="root seed")
    p_preset.add_argument("--workers", type=int, default=1, help="worker pool size")
    return parser


def _cmd_run(args) -> int:
    config = load_config(args.config) if args.config is not None else RunConfig()
    if args.seed is not None:
        config = replace(config, root_seed=args.seed)
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {args.workers}")
        config = replace(config, workers=args.workers)
    out = run(config, out_path=args.out)
    _, footer = parse_csv_log(out)
    print(f"wrote {out}")
    for key in ("algorithm", "total_cost", "final_grad_norm", "stop_reason", "delta_hat"):
        if key in footer:
            print(f"  {key} = {footer[key]}")
    return EXIT_OK


def _cmd_sample_grf(args) -> int:
    if args.samples < 1:
        raise ConfigError(f"samples must be >= 1, got {args.samples}")
    params = MaternParams(args.sigma2, args.nu, args.lambda_kappa)
    level = GridLevel(0, args.exponent)
    plan = build_embedding(level, params)
    x1, x2 = level.coordinates()
    with Path(args.out).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("# mlsgd-grf v1\n")
        fh.write("sample,x1,x2,value\n")
        for m in range(args.samples):
            draw = sample_field(plan, mix_seed(args.seed, 0, 0, m))
            vals = draw.values
            for i in range(vals.shape[0]):
                for j in range(vals.shape[1]):
                    fh.write(
                        f"{m},{float(x1[i, j])!r},{float(x2[i, j])!r},"
                        f"{float(vals[i, j])!r}\n"
                    )
    print(f"wrote {args.out} ({args.samples} sample(s) on a {level.n + 1}x{level.n + 1} grid)")
    return EXIT_OK


def _cmd_rates(args) -> int:
    records, footer = parse_csv_log(args.input)
    if not records:
        raise ConfigError(f"{args.input}: no data rows to fit")
    total = records[-1].cumulative_cost
    fits = summary_fits(records, args.burn_in_frac * total)
    print(f"{args.input}: {len(records)} records, total cost {total!r}")
    for key in ("alpha_hat", "beta_hat", "gamma_ct_hat", "delta_hat", "delta_intercept"):
        print(f"  {key} = {fits[key]!r}")
    if "delta_hat" in footer:
        print(f"  (footer delta_hat = {footer['delta_hat']})")
    return EXIT_OK


def _cmd_preset(args) -> int:
    paths = run_preset(args.name, args.out_dir, seed=args.seed, workers=args.workers)
    for path in paths:
        print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "sample-grf": _cmd_sample_grf,
        "rates": _cmd_rates,
        "preset": _cmd_preset,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, EstimationError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
