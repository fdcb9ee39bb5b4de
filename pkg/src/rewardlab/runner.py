"""Declarative run configuration, sweep execution and summary tables.

Manifest format (YAML)::

    name: my-sweep
    global_seed: 0
    parallelism: 2
    defaults:                # optional, merged under every entry
      train: {total_steps: 200000}
    runs:
      - id: "25"
        reward: {bonus_b: 8, distance_model: exponential}
        train: {n_envs: 8}   # TrainConfig overrides
        env: {press_speed: 0.05}
        evaluation: {episodes: 5, clicks_per_episode: 10}
        replicates: 3

Each run replicate writes to ``<out>/<id>/rep<k>/``: ``checkpoint.pt``,
``training_log.json`` and, last, ``result.json``. A replicate whose
``result.json`` reports ``completed`` is skipped on resume.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import yaml

from .env import EnvConfig
from .evaluation import evaluate, export_trajectories
from .ppo import Trainer, TrainConfig, default_env_factory
from .reward import RewardSpec

OUTPUT_ROOT_ENV = "REWARDLAB_OUTPUT"
RESULT_FILE = "result.json"
COMPLETED = "completed"
FAILED = "failed"

_MANIFEST_KEYS = {"name", "global_seed", "parallelism", "defaults", "runs"}
_RUN_KEYS = {"id", "reward", "train", "env", "evaluation", "replicates", "output_dir"}
_EVAL_KEYS = {"episodes", "clicks_per_episode"}


class ManifestError(ValueError):
    pass


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def stable_hash(text: str) -> int:
    """32-bit hash of a string that does not vary between processes."""
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


@dataclass(frozen=True)
class EvalSettings:
    episodes: int = 5
    clicks_per_episode: int = 10


@dataclass(frozen=True)
class RunConfig:
    id: str
    reward: RewardSpec
    train: TrainConfig = field(default_factory=TrainConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    evaluation: EvalSettings = field(default_factory=EvalSettings)
    replicates: int = 1
    output_dir: str | None = None

    def seed(self, global_seed: int, replicate: int = 0) -> int:
        key = self.id if replicate == 0 else f"{self.id}/{replicate}"
        return (int(global_seed) ^ stable_hash(key)) & 0x7FFFFFFF

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "reward": {k: v for k, v in self.reward.to_dict().items() if k != "id"},
            "train": self.train.to_dict(),
            "env": self.env.to_dict(),
            "evaluation": asdict(self.evaluation),
            "replicates": self.replicates,
        }
        if self.output_dir is not None:
            d["output_dir"] = self.output_dir
        return d


@dataclass(frozen=True)
class SweepManifest:
    runs: tuple[RunConfig, ...] = ()
    global_seed: int = 0
    parallelism: int = 1
    name: str = "sweep"

    def __len__(self) -> int:
        return len(self.runs)

    def get(self, run_id) -> RunConfig:
        for r in self.runs:
            if r.id == str(run_id):
                return r
        raise KeyError(f"no run with id {run_id!r}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "global_seed": self.global_seed,
            "parallelism": self.parallelism,
            "runs": [r.to_dict() for r in self.runs],
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        return path


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _mapping(value, where: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ManifestError(f"{where}: expected a mapping, got {type(value).__name__}")
    return value


def parse_run(entry: dict, defaults: dict | None = None, index: int = 0) -> RunConfig:
    if not isinstance(entry, dict):
        raise ManifestError(f"runs[{index}]: expected a mapping")
    label = f"entry {entry.get('id', f'#{index}')}"
    unknown = set(entry) - _RUN_KEYS
    if unknown:
        raise ManifestError(f"{label}: unknown key(s) {sorted(unknown)}")
    if "id" not in entry:
        raise ManifestError(f"{label}: missing field 'id'")
    data = _merge(defaults or {}, entry)
    run_id = str(data["id"])
    try:
        reward = RewardSpec.from_dict({**_mapping(data.get("reward"), "reward"), "id": run_id})
    except (TypeError, ValueError) as e:
        raise ManifestError(f"entry {run_id}: reward: {e}") from None
    try:
        train = TrainConfig.from_dict(_mapping(data.get("train"), "train"))
    except (TypeError, ValueError) as e:
        raise ManifestError(f"entry {run_id}: train: {e}") from None
    try:
        env = EnvConfig.from_dict(_mapping(data.get("env"), "env"))
        env.layout.validate(env.arm)
    except (TypeError, ValueError) as e:
        raise ManifestError(f"entry {run_id}: env: {e}") from None
    ev = _mapping(data.get("evaluation"), "evaluation")
    if set(ev) - _EVAL_KEYS:
        raise ManifestError(f"entry {run_id}: evaluation: unknown key(s) {sorted(set(ev) - _EVAL_KEYS)}")
    evaluation = EvalSettings(**ev)
    if evaluation.episodes < 1 or evaluation.clicks_per_episode < 1:
        raise ManifestError(f"entry {run_id}: evaluation: episodes and clicks_per_episode must be >= 1")
    replicates = data.get("replicates", 1)
    if not isinstance(replicates, int) or replicates < 1:
        raise ManifestError(f"entry {run_id}: replicates: must be an integer >= 1, got {replicates!r}")
    out = data.get("output_dir")
    return RunConfig(run_id, reward, train, env, evaluation, replicates, None if out is None else str(out))


def parse_manifest(data: dict) -> SweepManifest:
    data = _mapping(data, "manifest")
    unknown = set(data) - _MANIFEST_KEYS
    if unknown:
        raise ManifestError(f"manifest: unknown key(s) {sorted(unknown)}")
    defaults = _mapping(data.get("defaults"), "defaults")
    if set(defaults) - (_RUN_KEYS - {"id"}):
        raise ManifestError(f"defaults: unknown key(s) {sorted(set(defaults) - _RUN_KEYS)}")
    entries = data.get("runs") or []
    if not isinstance(entries, list):
        raise ManifestError("runs: expected a list")
    runs = tuple(parse_run(e, defaults, i) for i, e in enumerate(entries))
    seen = set()
    for r in runs:
        if r.id in seen:
            raise ManifestError(f"entry {r.id}: id: duplicate run id")
        seen.add(r.id)
    parallelism = data.get("parallelism", 1)
    if not isinstance(parallelism, int) or parallelism < 1:
        raise ManifestError(f"parallelism: must be an integer >= 1, got {parallelism!r}")
    seed = data.get("global_seed", 0)
    if not isinstance(seed, int):
        raise ManifestError(f"global_seed: must be an integer, got {seed!r}")
    return SweepManifest(runs, seed, parallelism, str(data.get("name", "sweep")))


def load_manifest(path: str | Path) -> SweepManifest:
    with Path(path).open() as fh:
        data = yaml.safe_load(fh)
    return parse_manifest(data or {})


def bundled_manifest_path() -> Path:
    return Path(str(resources.files("rewardlab") / "data" / "reward_grid.yaml"))


def reward_grid() -> SweepManifest:
    return load_manifest(bundled_manifest_path())


@dataclass
class RunResult:
    run_id: str
    replicate: int
    seed: int
    status: str
    reward: dict
    metrics: dict | None = None
    training: dict | None = None
    artifacts: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def completed(self) -> bool:
        return self.status == COMPLETED

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RunResult:
        return cls(**d)

    def write(self, path: Path) -> None:
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        tmp.replace(path)


def run_dir(run: RunConfig, out_root: str | Path, replicate: int = 0) -> Path:
    base = Path(run.output_dir) if run.output_dir else Path(out_root) / run.id
    return base / f"rep{replicate}"


def read_result(path: str | Path) -> RunResult | None:
    path = Path(path)
    if path.is_dir():
        path = path / RESULT_FILE
    if not path.exists():
        return None
    return RunResult.from_dict(json.loads(path.read_text()))


def _training_summary(log) -> dict:
    recs = log.records
    tail = recs[-10:]
    return {
        "updates": len(recs),
        "env_steps": recs[-1].env_steps if recs else 0,
        "final_entropy": recs[-1].entropy if recs else None,
        "final_successes_per_update": sum(r.successes for r in tail) / len(tail) if tail else None,
        "wall_clock_s": sum(r.wall_clock for r in recs),
    }


def execute_run(run: RunConfig, global_seed: int, replicate: int, out_root: str | Path,
                export: bool = False, resume: bool = True) -> RunResult:
    """Train and evaluate one replicate; failures are captured, never raised.

    With ``resume`` a matching partial checkpoint in the run directory is
    continued instead of starting over.
    """
    seed = run.seed(global_seed, replicate)
    out = run_dir(run, out_root, replicate)
    out.mkdir(parents=True, exist_ok=True)
    base = dict(run_id=run.id, replicate=replicate, seed=seed, reward=run.reward.to_dict())
    try:
        import torch

        torch.set_num_threads(1)
        cfg = replace(run.train, seed=seed)
        ckpt = out / "checkpoint.pt"
        trainer = None
        if resume and ckpt.exists():
            trainer = Trainer.from_checkpoint(ckpt)
            if trainer.cfg != cfg or trainer.spec != run.reward:
                trainer = None
        if trainer is None:
            trainer = Trainer(run.reward, cfg, default_env_factory(run.env))
        model, log = trainer.run(checkpoint_dir=out)
        (out / "training_log.json").write_text(json.dumps(log.to_dicts()) + "\n")
        metrics, logs = evaluate(model, run.reward, run.evaluation.episodes, run.evaluation.clicks_per_episode,
                                 seed=seed, env_config=run.env)
        artifacts = {"checkpoint": str(ckpt), "training_log": str(out / "training_log.json")}
        if export:
            export_trajectories(logs, out / "trajectories", svg=True, layout=run.env.layout)
            artifacts["trajectories"] = str(out / "trajectories")
        result = RunResult(**base, status=COMPLETED, metrics=metrics.to_dict(), training=_training_summary(log),
                           artifacts=artifacts)
    except Exception as e:  # noqa: BLE001 - a failed run must not abort the sweep
        result = RunResult(**base, status=FAILED, error=f"{type(e).__name__}: {e}\n{traceback.format_exc()}")
    result.write(out / RESULT_FILE)
    return result


def _job(args):
    return execute_run(*args)


def run_sweep(manifest: SweepManifest, out_root: str | Path | None = None, parallelism: int | None = None,
              resume: bool = True, export: bool = False) -> list[RunResult]:
    """Run every replicate of every entry; returns results in manifest order."""
    out_root = Path(out_root) if out_root is not None else default_output_root()
    out_root.mkdir(parents=True, exist_ok=True)
    jobs = [(run, k) for run in manifest.runs for k in range(run.replicates)]
    results: dict[int, RunResult] = {}
    pending = []
    for idx, (run, k) in enumerate(jobs):
        prev = read_result(run_dir(run, out_root, k)) if resume else None
        if prev is not None and prev.completed:
            results[idx] = prev
        else:
            pending.append(idx)
    k_par = parallelism or manifest.parallelism
    args = [(jobs[i][0], manifest.global_seed, jobs[i][1], out_root, export, resume) for i in pending]
    if k_par <= 1 or len(pending) <= 1:
        for i, a in zip(pending, args):
            results[i] = _job(a)
            _write_index(out_root, [results[j] for j in sorted(results)])
    else:
        with ProcessPoolExecutor(max_workers=k_par) as pool:
            for i, res in zip(pending, pool.map(_job, args)):
                results[i] = res
                _write_index(out_root, [results[j] for j in sorted(results)])
    ordered = [results[i] for i in range(len(jobs))]
    _write_index(out_root, ordered)
    return ordered


def _write_index(out_root: Path, results: Sequence[RunResult]) -> None:
    tmp = out_root / "index.json.tmp"
    tmp.write_text(json.dumps([{"run_id": r.run_id, "replicate": r.replicate, "status": r.status}
                               for r in results], indent=1) + "\n")
    tmp.replace(out_root / "index.json")


def collect_results(root: str | Path) -> list[RunResult]:
    """All result files below ``root``, ordered by run id then replicate."""
    found = [read_result(p) for p in Path(root).rglob(RESULT_FILE)]
    return sorted((r for r in found if r is not None), key=lambda r: (_id_key(r.run_id), r.replicate))


def _id_key(run_id: str):
    return (0, int(run_id), "") if run_id.isdigit() else (1, 0, run_id)


SUMMARY_COLUMNS = ["run_id", "replicate", "seed", "status", "effort_model", "w_effort", "distance_model", "bonus_b",
                   "success_rate", "mean_completion_time", "mean_completion_time_filtered"]
GROUP_COLUMNS = ["effort_model", "distance_model", "bonus", "n_runs", "success_rate", "mean_completion_time",
                 "mean_completion_time_filtered"]

# completion times are averaged only over runs at or above this success rate in the filtered column
FILTER_SUCCESS = 0.5


def _num(x) -> float | None:
    if x is None or x == "":
        return None
    return float(x)


def summarize(results: Iterable[RunResult | dict]) -> list[dict]:
    """One row per run replicate; accepts RunResults or previously summarized rows."""
    rows = []
    for r in results:
        if isinstance(r, RunResult):
            m = r.metrics or {}
            sr, t = m.get("success_rate"), m.get("mean_completion_time")
            row = {
                "run_id": r.run_id, "replicate": r.replicate, "seed": r.seed, "status": r.status,
                "effort_model": r.reward["effort_model"], "w_effort": float(r.reward["w_effort"]),
                "distance_model": r.reward["distance_model"], "bonus_b": float(r.reward["bonus_b"]),
                "success_rate": sr, "mean_completion_time": t,
            }
        else:
            row = {k: r.get(k) for k in SUMMARY_COLUMNS[:-1]}
            for k in ("replicate", "seed"):
                row[k] = int(row[k])
            for k in ("w_effort", "bonus_b", "success_rate", "mean_completion_time"):
                row[k] = _num(row[k])
            row["run_id"] = str(row["run_id"])
        sr = row["success_rate"]
        row["mean_completion_time_filtered"] = (
            row["mean_completion_time"] if sr is not None and sr >= FILTER_SUCCESS else None)
        rows.append(row)
    return rows


def group_summary(rows: Sequence[dict]) -> list[dict]:
    """Mean success rate and completion time per (effort, distance, bonus present)."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        if r["success_rate"] is None:
            continue
        key = (r["effort_model"], r["distance_model"], "yes" if r["bonus_b"] > 0 else "no")
        groups.setdefault(key, []).append(r)
    out = []
    for key, members in groups.items():
        filt = [m["mean_completion_time"] for m in members if m["success_rate"] >= FILTER_SUCCESS]
        out.append({
            "effort_model": key[0], "distance_model": key[1], "bonus": key[2], "n_runs": len(members),
            "success_rate": math.fsum(m["success_rate"] for m in members) / len(members),
            "mean_completion_time": math.fsum(m["mean_completion_time"] for m in members) / len(members),
            "mean_completion_time_filtered": math.fsum(filt) / len(filt) if filt else None,
        })
    return out


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_table(rows: Sequence[dict], path: str | Path, columns: Sequence[str] = SUMMARY_COLUMNS) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])
    return path


def read_table(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
