"""Command-line entry points: run, validate, replay.

Exit codes: 0 all scenario assertions passed, 1 an assertion failed (the
failing criterion and the measured vs. required numbers are printed),
2 configuration or assumption validation failed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import coefficients as mc
from .experiments import (ConfigError, EnsembleError, ExperimentConfig,
                          SCENARIOS, build_context, derive_path_seed,
                          run_scenario)


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    if getattr(args, "scenario", None):
        cfg.scenario = args.scenario
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "paths", None) is not None:
        cfg.paths = args.paths
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    cfg.validate()
    return cfg


def cmd_run(args) -> int:
    try:
        cfg = _load_config(args)
        outcome = run_scenario(cfg, force=args.force)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except EnsembleError as exc:
        print(f"ensemble failure: {exc}", file=sys.stderr)
        return 1
    status = "PASS" if outcome.passed else "FAIL"
    print(f"[{cfg.scenario}] {status}: {outcome.message}")
    print(f"outputs in {outcome.out_dir} (manifest: {outcome.manifest.name})")
    return 0 if outcome.passed else 1


def cmd_validate(args) -> int:
    try:
        cfg = ExperimentConfig.from_file(args.config)
        ctx = build_context(cfg)
        report = mc.verify_assumptions(ctx.coeffs, ctx.u0, cfg.urange)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    print(report)
    if not report.all_passed:
        print("assumption checks failed", file=sys.stderr)
        return 2
    print("configuration and assumptions OK")
    return 0


def _parse_manifest(path: Path):
    text = path.read_text()
    head, _, rest = text.partition("[config]")
    config_text, _, _ = rest.partition("[files]")
    meta = {}
    for line in head.splitlines():
        if "=" in line and not line.startswith("#"):
            k, _, v = line.partition("=")
            meta[k.strip()] = v.strip()
    return meta, config_text.strip("\n")


def cmd_replay(args) -> int:
    meta, config_text = _parse_manifest(Path(args.manifest))
    try:
        cfg = ExperimentConfig.from_text(config_text)
    except ConfigError as exc:
        print(f"manifest config invalid: {exc}", file=sys.stderr)
        return 2
    base_seed = int(meta.get("base_seed", cfg.seed))
    seed = derive_path_seed(base_seed, args.path)
    print(f"scenario {cfg.scenario}: path {args.path} derives seed {seed}")
    # rerun the whole scenario with a single path at that seed for forensics
    cfg.seed = base_seed
    cfg.paths = max(cfg.paths, args.path + 1)
    cfg.out_dir = str(Path(cfg.out_dir) / f"replay-path{args.path}")
    try:
        outcome = run_scenario(cfg, force=True, workers=1)
    except (ConfigError, EnsembleError) as exc:
        print(f"replay failed: {exc}", file=sys.stderr)
        return 1
    print(f"replay outcome: {outcome.message}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="skvarwave",
        description="small-mass-limit experiments for the stochastic "
                    "variational wave equation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--scenario", choices=sorted(SCENARIOS))
    p_run.add_argument("--seed", type=lambda s: int(s, 0))
    p_run.add_argument("--paths", type=int)
    p_run.add_argument("--out")
    p_run.add_argument("--workers", type=int)
    p_run.add_argument("--force", action="store_true",
                       help="run even if assumption checks fail")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="validate a config file")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=cmd_validate)

    p_rep = sub.add_parser("replay", help="re-run one ensemble path")
    p_rep.add_argument("--manifest", required=True)
    p_rep.add_argument("--path", type=int, required=True)
    p_rep.set_defaults(func=cmd_replay)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
