"""Command-line entry point: ``biaslab run | verify | simulate | model``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

from . import _backend
from .core import discretize, model_to_json
from .harness import (BETA1_EXTENSION, ConfigError, ExperimentConfig, run_experiment, summarize, trajectory_seed,
                      true_effect, write_results)
from .policy import simulate_trajectory


def _csv_list(cast):
    def parse(text: str):
        try:
            return [cast(v) for v in text.split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.master_seed = args.seed
    if getattr(args, "factors", None):
        cfg.factors = args.factors
    if getattr(args, "beta1", None):
        cfg.beta1_grid = args.beta1
    if getattr(args, "extend_beta1", False):
        cfg.beta1_grid = list(cfg.beta1_grid) + [b for b in BETA1_EXTENSION if b not in cfg.beta1_grid]
    if getattr(args, "n_traj", None):
        cfg.n_traj = args.n_traj
    return cfg.validate()


def cmd_run(args) -> int:
    cfg = _load_config(args)
    t0 = time.perf_counter()
    rows = run_experiment(cfg, workers=args.workers)
    write_results(rows, args.out)
    if not args.quiet:
        print(summarize(rows, true_effect(cfg)))
        print(f"wrote {len(rows)} rows to {args.out} in {time.perf_counter() - t0:.1f}s "
              f"({_backend.NAME} kernels)")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_checks

    results = run_checks()
    for c in results:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail} ({c.seconds:.2f}s)")
    failed = sum(not c.passed for c in results)
    print(f"{len(results) - failed}/{len(results)} checks passed ({_backend.NAME} kernels)")
    return 0 if failed == 0 else 1


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    fine = discretize(cfg.continuous_model(), cfg.delta)
    traj = simulate_trajectory(fine, cfg.policy(args.beta1_value), cfg.n_k,
                               seed=trajectory_seed(cfg.master_seed, args.index))
    text = traj.to_jsonl()
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
    return 0


def cmd_model(args) -> int:
    cfg = _load_config(args)
    cm = cfg.continuous_model()
    doc = json.loads(model_to_json(cm))
    if args.step:
        doc = json.loads(model_to_json(discretize(cm, cfg.delta)))
    print(json.dumps(doc, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="biaslab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--seed", type=int, help="override masterSeed")

    run = sub.add_parser("run", help="run the beta1 sweep and write the results CSV")
    common(run)
    run.add_argument("--out", required=True, help="output CSV path")
    run.add_argument("--factors", type=_csv_list(int), help="comma-separated coarsening factors")
    run.add_argument("--beta1", type=_csv_list(float), help="comma-separated beta1 grid")
    run.add_argument("--extend-beta1", action="store_true",
                     help="append %s to the beta1 grid" % ",".join(f"{b:g}" for b in BETA1_EXTENSION))
    run.add_argument("--n-traj", type=int, help="override nTraj")
    run.add_argument("--workers", type=int, default=1, help="processes for sweep points")
    run.add_argument("-q", "--quiet", action="store_true")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="run the oracle cross-checks")
    ver.set_defaults(func=cmd_verify)

    sim = sub.add_parser("simulate", help="write one trajectory as JSON lines")
    common(sim)
    sim.add_argument("--beta1", dest="beta1_value", type=float, default=0.0)
    sim.add_argument("--index", type=int, default=0, help="trajectory index for seed splitting")
    sim.add_argument("--out", default="-")
    sim.set_defaults(func=cmd_simulate)

    mod = sub.add_parser("model", help="print the configured model as JSON")
    common(mod)
    mod.add_argument("--step", action="store_true", help="print the discretized step model")
    mod.set_defaults(func=cmd_model)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
