"""Command line entry point: ``rewardlab <command> ...``.

Outputs go below ``$REWARDLAB_OUTPUT`` (default ``./runs``) unless ``--out``
is given. The exit status is 0 only if every requested run completed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from . import runner
from .env import EnvConfig
from .evaluation import evaluate, export_trajectories
from .ppo import load_policy
from .reward import RewardSpec


def _out_root(args) -> Path:
    return Path(args.out) if args.out else runner.default_output_root()


def _load_run(args) -> tuple[runner.RunConfig, int]:
    if args.config:
        data = yaml.safe_load(Path(args.config).read_text()) or {}
        if "runs" in data:
            m = runner.parse_manifest(data)
            if args.id is not None:
                return m.get(args.id), m.global_seed
            if len(m) != 1:
                raise runner.ManifestError(f"{args.config}: holds {len(m)} runs, select one with --id")
            return m.runs[0], m.global_seed
        return runner.parse_run(data), 0
    m = runner.load_manifest(args.manifest) if args.manifest else runner.reward_grid()
    return m.get(args.id), m.global_seed


def cmd_train(args) -> int:
    run, seed = _load_run(args)
    if args.total_steps:
        from dataclasses import replace

        run = replace(run, train=replace(run.train, total_steps=args.total_steps))
    res = runner.execute_run(run, seed, args.replicate, _out_root(args), export=args.export, resume=args.resume)
    print(json.dumps({"run_id": res.run_id, "status": res.status, "metrics": res.metrics, "error": res.error}, indent=2))
    return 0 if res.completed else 1


def cmd_evaluate(args) -> int:
    model, state = load_policy(args.checkpoint)
    spec = RewardSpec.from_dict(state["reward_spec"])
    env = EnvConfig.from_dict(state["env_config"])
    metrics, logs = evaluate(model, spec, args.episodes, args.clicks, seed=args.seed, env_config=env)
    if args.export:
        export_trajectories(logs, args.export, svg=args.svg, layout=env.layout)
    print(json.dumps({"run_id": spec.id, "seed": args.seed, **metrics.to_dict()}, indent=2))
    return 0


def cmd_sweep(args) -> int:
    manifest = runner.load_manifest(args.manifest)
    results = runner.run_sweep(manifest, _out_root(args), parallelism=args.parallel, resume=args.resume,
                               export=args.export)
    for r in results:
        sr = r.metrics["success_rate"] if r.metrics else None
        print(f"{r.run_id}\trep{r.replicate}\t{r.status}\tsuccess_rate={sr}")
    return 0 if all(r.completed for r in results) else 1


def cmd_summarize(args) -> int:
    rows = runner.summarize(runner.collect_results(args.results))
    if args.group:
        rows, columns = runner.group_summary(rows), runner.GROUP_COLUMNS
    else:
        columns = runner.SUMMARY_COLUMNS
    if args.output:
        runner.write_table(rows, args.output, columns)
    else:
        import csv

        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([runner._cell(r.get(c)) for c in columns])
    return 0


def cmd_export(args) -> int:
    root = Path(args.results) if args.results else runner.default_output_root()
    rdir = root / str(args.run) / f"rep{args.replicate}"
    res = runner.read_result(rdir)
    if res is None or not res.completed:
        print(f"no completed run {args.run!r} under {root}", file=sys.stderr)
        return 1
    model, state = load_policy(rdir / "checkpoint.pt")
    spec = RewardSpec.from_dict(state["reward_spec"])
    env = EnvConfig.from_dict(state["env_config"])
    _, logs = evaluate(model, spec, args.episodes, args.clicks, seed=res.seed, env_config=env)
    files = export_trajectories(logs, args.dest or rdir / "trajectories", svg=args.svg, layout=env.layout)
    print(f"wrote {len(files)} files")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rewardlab", description="Reward design experiments on a muscle-driven arm.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train and evaluate one configuration")
    t.add_argument("--config", help="YAML file with one run entry or a manifest")
    t.add_argument("--id", help="run id in the manifest (default: the bundled reward grid)")
    t.add_argument("--manifest", help="manifest to take --id from")
    t.add_argument("--replicate", type=int, default=0)
    t.add_argument("--total-steps", type=int)
    t.add_argument("--export", action="store_true", help="also write trajectory files")
    t.add_argument("--no-resume", dest="resume", action="store_false", help="ignore an existing checkpoint")
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=5)
    e.add_argument("--clicks", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--export", help="directory for trajectory files")
    e.add_argument("--svg", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="run every entry of a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--parallel", type=int)
    s.add_argument("--resume", action="store_true", help="skip completed runs, continue partial ones")
    s.add_argument("--export", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    m = sub.add_parser("summarize", help="tabulate results below a directory")
    m.add_argument("--results", required=True)
    m.add_argument("--group", action="store_true", help="aggregate by effort, distance and bonus")
    m.add_argument("--output")
    m.set_defaults(func=cmd_summarize)

    x = sub.add_parser("export", help="re-evaluate a finished run and write its trajectories")
    x.add_argument("--run", required=True)
    x.add_argument("--results", help="results root (default: output root)")
    x.add_argument("--replicate", type=int, default=0)
    x.add_argument("--episodes", type=int, default=5)
    x.add_argument("--clicks", type=int, default=10)
    x.add_argument("--svg", action="store_true")
    x.add_argument("--dest")
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "train" and not (args.config or args.id):
        print("train: give --config or --id", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (runner.ManifestError, KeyError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
