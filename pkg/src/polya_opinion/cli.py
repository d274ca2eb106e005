"""Command-line entry point: ``python -m polya_opinion <command> --config PATH``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .errors import AssertionFailure, ConfigError, PolyaError
from .harness import load_config, run_experiment, sweep_delta, write_regime

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_ASSERT = 0, 1, 2, 3

_PARTS = {
    "simulate": ("trajectory",),
    "estimate": ("trajectory", "estimates"),
    "rate": ("rates",),
    "diagnose": ("diagnostics",),
}


def build_parser():
    p = argparse.ArgumentParser(prog="polya-opinion", description="Interacting Polya urn opinion experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "simulate replications and write checkpointed trajectories",
        "estimate": "simulate and evaluate the configured estimators at every checkpoint",
        "classify": "report the consensus regime of the configured network and biases",
        "rate": "fit decay exponents of the Perron functional and of each agent",
        "diagnose": "likelihood-ratio martingale checks and the coupled linearized process",
        "sweep": "empirical and predicted convergence times over a range of delta",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", required=True, metavar="PATH", help="TOML experiment config")
        sp.add_argument("--seed", type=int, help="override base_seed")
        sp.add_argument("--horizon", type=int, help="override horizon")
        sp.add_argument("--reps", type=int, help="override replications")
        sp.add_argument("--out", metavar="DIR", help="override output_dir")
    return p


def _load(args):
    cfg = load_config(args.config)
    cfg = cfg.override(base_seed=args.seed, horizon=args.horizon, replications=args.reps, output_dir=args.out)
    if args.command == "rate" and not cfg.diagnostics.rate_fit:
        cfg = dataclasses.replace(cfg, diagnostics=dataclasses.replace(cfg.diagnostics, rate_fit=True))
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        if args.command == "classify":
            rep = write_regime(cfg)
            print(json.dumps(rep.to_dict(with_vectors=False)))
        elif args.command == "sweep":
            table = sweep_delta(cfg)
            for d, emp, pred, worst in table.rows:
                print(f"delta={d:g}  t*_empirical={emp:g}  t*_predicted={pred:g}  t*_worst_case={worst:g}")
            print(json.dumps(table.fit, sort_keys=True))
        else:
            report = run_experiment(cfg, parts=_PARTS[args.command])
            print(f"regime: {report.regime.regime.value}  replications: {len(report.seeds)}  wall clock: {report.wall_clock:.1f}s")
            for name in sorted(report.files):
                print(f"wrote {name}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssertionFailure as exc:
        print(f"assertion failure: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    except PolyaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
