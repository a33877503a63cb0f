"""Command-line experiment runner.

One subcommand per experiment kind; every run prints the result envelope
as JSON to stdout and, with --out, persists the envelope, the canonical
payload, and plot-ready CSV files.

Exit codes: 0 success, 2 configuration or usage error, 3 certification
failure.
"""

from __future__ import annotations

import argparse
import sys

from .configio import ConfigError
from .experiments import EXPERIMENT_KINDS, ExperimentSpec, run
from .simulate import SimulationError

_EXIT_CONFIG = 2
_EXIT_CERTIFY_FAIL = 3


def _parse_grid(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.replace(" ", "").split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad N grid {text!r}; expected e.g. 20,40,80")


def _parse_seeds(text: str) -> tuple[int, ...]:
    return _parse_grid(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmflab",
        description="Interacting-SDE network laboratory: simulation, rate "
                    "certification, attachment graphs, cumulant and tail probes.")
    sub = parser.add_subparsers(dest="kind", required=True, metavar="KIND")
    descriptions = {
        "simulate": "Monte Carlo gap estimate between a network and its mean-field twin",
        "rates": "twelve rates, constants, and the certified bound for a config",
        "certify": "run rates and simulate, PASS/FAIL the bound (exit 3 on FAIL)",
        "chaos-sweep": "decoupling inequalities and sparse-family rate decay over an N grid",
        "pagen": "grow preferential-attachment graphs; emit edge and history CSVs",
        "pafit": "fit degree-growth exponents from pagen history CSVs",
        "ldp-lambda": "Cesàro cumulant table of the drift-only reference family",
        "ldp-tail": "normalised log tail probabilities along the reference family",
        "mckean-sweep": "error and bound versus N for the averaging reference network",
    }
    for kind in EXPERIMENT_KINDS:
        p = sub.add_parser(kind, help=descriptions[kind])
        p.add_argument("--config", default=None, help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
        p.add_argument("--out", default=None, help="output directory for envelope and CSVs")
        p.add_argument("--n-grid", type=_parse_grid, default=None,
                       help="comma-separated strictly increasing sizes, e.g. 20,40,80")
        p.add_argument("--seeds", type=_parse_seeds, default=None,
                       help="comma-separated seed list (graph experiments)")
        p.add_argument("--paths", type=int, default=None, help="Monte Carlo path count")
        p.add_argument("--steps", type=int, default=None, help="time steps per path")
        p.add_argument("--threads", type=int, default=1, help="worker threads")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    spec = ExperimentSpec(
        kind=args.kind,
        config_path=args.config,
        n_grid=args.n_grid,
        seeds=args.seeds,
        seed=args.seed,
        out_dir=args.out,
        n_paths=args.paths,
        steps=args.steps,
        threads=max(1, args.threads),
    )
    try:
        env = run(spec)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    except (ValueError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    print(env.to_json())
    if args.kind == "certify" and not env.payload.get("pass", False):
        return _EXIT_CERTIFY_FAIL
    return 0


if __name__ == "__main__":
    sys.exit(main())
