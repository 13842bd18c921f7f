"""Command-line entry point: ``cvexplore {train,oracle,eval,verify}``.

Exit codes: 0 on success, 1 when a verification check fails, 2 on an
invalid configuration or command line.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import checks
from .agents import METRIC_COLUMNS, evaluate, load_artifacts, train, training_env
from .config import ConfigError, ExperimentConfig, load_config, save_config
from .gridworld import env_ids, make_env
from .metrics import bootstrap_ci, iqm
from .nnet import load_arrays

AGGREGATE_COLUMNS = (
    "iteration",
    "n_seeds",
    "return_iqm",
    "return_lo",
    "return_hi",
    "entropy_iqm",
    "entropy_lo",
    "entropy_hi",
)
EXIT_OK, EXIT_CHECK_FAILED, EXIT_BAD_CONFIG = 0, 1, 2


def _fmt(value) -> str:
    # repr keeps floats exact and locale independent
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def write_rows(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def aggregate(per_seed: dict[int, list[dict]], n_resamples: int = 1000, seed: int = 0) -> list[dict]:
    """IQM across seeds per iteration with a percentile bootstrap 95% band."""
    rng = np.random.default_rng(seed)
    by_iter: dict[int, list[dict]] = {}
    for rows in per_seed.values():
        for row in rows:
            by_iter.setdefault(row["iteration"], []).append(row)
    out = []
    for it in sorted(by_iter):
        rows = by_iter[it]
        rec = {"iteration": it, "n_seeds": len(rows)}
        for key, name in (("return_estimate", "return"), ("entropy_estimate", "entropy")):
            vals = [r[key] for r in rows]
            lo, hi = bootstrap_ci(vals, rng, n_resamples)
            rec.update({f"{name}_iqm": iqm(vals), f"{name}_lo": lo, f"{name}_hi": hi})
        out.append(rec)
    return out


def run_experiment(config: ExperimentConfig, out_dir, env_seed: int = 0, log=None) -> dict[int, list[dict]]:
    """Train every seed of ``config``; write per-seed and aggregate CSVs plus checkpoints."""
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / "config.json")
    env = make_env(config.env, env_seed)
    per_seed = {}
    for seed in config.seeds:
        artifacts, rows = train(config, env, seed)
        per_seed[seed] = rows
        write_rows(out / f"seed_{seed}.csv", METRIC_COLUMNS, rows)
        artifacts.save(out / f"seed_{seed}.ckpt")
        if log is not None:
            last = rows[-1]
            log(f"seed {seed}: return {last['return_estimate']:.4f}, entropy {last['entropy_estimate']:.4f}")
    write_rows(out / "aggregate.csv", AGGREGATE_COLUMNS, aggregate(per_seed))
    return per_seed


def _config_from_args(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.env:
        changes["env"] = args.env
    if args.agent:
        changes["agent"] = args.agent
    if args.seed is not None:
        changes["seeds"] = [args.seed]
    if getattr(args, "iterations", None):
        changes["iterations"] = args.iterations
    return config.replace(**changes).validate()


def _report(results) -> int:
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


def cmd_train(args) -> int:
    config = _config_from_args(args)
    if config.env not in env_ids() and not Path(config.env).exists():
        raise ConfigError("env", f"unknown environment {config.env!r}")
    run_experiment(config, args.out, args.env_seed, log=print)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    return _report([check() for check in checks.ORACLE_CHECKS])


def cmd_eval(args) -> int:
    env_id = args.env
    if env_id is None:
        env_id = load_arrays(args.checkpoint)[1]["config"]["env"]
    env = make_env(env_id, args.env_seed)
    art = load_artifacts(args.checkpoint, env)
    config = art.config.replace(eval_rollouts=args.rollouts)
    ret, ent = evaluate(env, art.actor, config, np.random.default_rng(args.seed or 0), explore_env=training_env(env, config))
    print(json.dumps({"env": env_id, "return_estimate": ret, "entropy_estimate": ent}))
    return EXIT_OK


def cmd_verify(args) -> int:
    results = [check() for check in checks.FAST_CHECKS]
    if args.slow:
        results += [checks.learned_visitation(), checks.entropy_trend(), checks.return_trend()]
    return _report(results)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvexplore", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; missing keys take the defaults")
        p.add_argument("--seed", type=int, help="run a single seed")
        p.add_argument("--env", help="environment id or map file")
        p.add_argument("--agent", help="opac-cv, opac-mv or sac")
        p.add_argument("--env-seed", type=int, default=0, help="seed of the procedural layout")

    p = sub.add_parser("train", help="run an experiment and write CSV curves")
    common(p)
    p.add_argument("--out", default="runs/latest", help="output directory")
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("oracle", help="tabular checks of the fixed point, contraction and value bound")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--env")
    p.add_argument("--env-seed", type=int, default=0)
    p.add_argument("--seed", type=int)
    p.add_argument("--rollouts", type=int, default=100)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="full property suite")
    p.add_argument("--slow", action="store_true", help="include the training-based checks (minutes)")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG


if __name__ == "__main__":
    sys.exit(main())
