"""Persistent driver around :func:`congrad.selfloop.run_experiment`.

Directory layout under the output directory::

    data/                      written by gen-data
        meta.json              data-relevant config + seed
        tasks.json             language regions, directions, prompt ids
        prompts.jsonl          one record per training prompt (with its target)
        heldout_prompts.jsonl  one record per held-out prompt
        heldout_pairs.jsonl    evaluation pairs
        seed_policy.ckpt       initial policy
    <arm>/                     written by train
        config.json
        checkpoints/round_NNN.ckpt
        pairs/round_NNN.jsonl  self-rewarding preference data
        metrics.jsonl          one record per (round, language)
        rounds.jsonl           one summary per round
        filter_report.jsonl    one record per scored sample (rounds >= 2)
        conflicts.jsonl        one record per (round, language pair)
        report.json
        manifest.json
"""
from __future__ import annotations

import json
import logging
import os
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

from .. import io
from ..config import ExperimentConfig
from ..errors import CongradError, InvalidInputError
from ..filtering import KINDS, FilterConfig
from ..preference import PreferencePair
from ..selfloop import RoundState, Scenario, build_scenario, round_summary, run_experiment
from ..tasks import JudgeModel, LanguageTask
from ..seeding import derive_seed

log = logging.getLogger(__name__)

DATA_FIELDS = ("languages", "prompts_per_language", "heldout_per_language", "k", "vocab_size", "max_len",
               "region_width", "region_overlap", "prior_strength", "init_noise", "judge_noise_std", "seed")

ARMS = {
    "congrad-max": ("congrad", "max"),
    "congrad-min": ("congrad", "min"),
    "random": ("random", "max"),
    "reward-max": ("reward_margin", "max"),
    "reward-min": ("reward_margin", "min"),
    "length-max": ("length_margin", "max"),
    "length-min": ("length_margin", "min"),
    "full": ("random", "max"),
}


class LockError(CongradError):
    pass


@contextmanager
def directory_lock(path: Path):
    path.mkdir(parents=True, exist_ok=True)
    lock = path / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"{path} is in use by another process (remove {lock} if it is stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def apply_arm(cfg: ExperimentConfig, arm: str | None = None, rho: float | None = None) -> ExperimentConfig:
    if arm is not None:
        if arm in KINDS:
            # a bare filter kind keeps the configured direction
            kind, direction = arm, cfg.filter.direction
        elif arm in ARMS:
            kind, direction = ARMS[arm]
        else:
            raise InvalidInputError(f"unknown arm {arm!r}; choose from {', '.join(list(ARMS) + list(KINDS))}")
        cfg = replace(cfg, filter=replace(cfg.filter, kind=kind, direction=direction))
        if arm == "full":
            cfg = replace(cfg, filter=replace(cfg.filter, retain_fraction=1.0))
    if rho is not None and arm != "full":
        cfg = replace(cfg, filter=FilterConfig(rho, cfg.filter.direction, cfg.filter.kind, cfg.filter.seed))
    return cfg


def arm_name(cfg: ExperimentConfig) -> str:
    f = cfg.filter
    if f.retain_fraction == 1.0:
        return "full"
    base = {v: k for k, v in ARMS.items() if k != "full"}[(f.kind, f.direction)]
    return base if f.retain_fraction == 0.5 else f"{base}-rho{f.retain_fraction:g}"


# ---------------------------------------------------------------- gen-data

def _data_meta(cfg: ExperimentConfig) -> dict:
    d = cfg.to_dict()
    return {"format": "congrad.data-meta", "version": io.FORMAT_VERSION, "config": {k: d[k] for k in DATA_FIELDS}}


def gen_data(cfg: ExperimentConfig, out: Path) -> Path:
    """Write the synthetic prompts, targets, held-out pairs and seed policy."""
    data = Path(out) / "data"
    data.mkdir(parents=True, exist_ok=True)
    sc = build_scenario(cfg)
    (data / "meta.json").write_text(json.dumps(_data_meta(cfg), indent=2, sort_keys=True) + "\n")
    (data / "tasks.json").write_text(json.dumps(
        {"format": "congrad.tasks", "version": io.FORMAT_VERSION, "tasks": [t.to_dict() for t in sc.tasks]},
        indent=2, sort_keys=True) + "\n")
    for fname, split in (("prompts.jsonl", "train"), ("heldout_prompts.jsonl", "heldout")):
        records = [{"language": t.name, "prompt_id": pid, "split": split, "target": list(t.targets[pid])}
                   for t in sc.tasks for pid in (t.train_prompts if split == "train" else t.heldout_prompts)]
        io.write_jsonl(data / fname, io.PROMPTS_FORMAT, records)
    io.write_jsonl(data / "heldout_pairs.jsonl", io.PAIRS_FORMAT,
                   [{"round": 0, **p.to_dict()} for l in sc.languages for p in sc.heldout[l]])
    io.save_policy(data / "seed_policy.ckpt", sc.initial_policy)
    return data


def load_scenario(cfg: ExperimentConfig, out: Path) -> Scenario:
    data = Path(out) / "data"
    needed = ["meta.json", "tasks.json", "prompts.jsonl", "heldout_prompts.jsonl", "heldout_pairs.jsonl",
              "seed_policy.ckpt"]
    missing = [n for n in needed if not (data / n).exists()]
    if missing:
        raise InvalidInputError(f"missing data files in {data}: {', '.join(missing)}; run `congrad gen-data` first")
    meta = json.loads((data / "meta.json").read_text())
    expected = _data_meta(cfg)["config"]
    diff = [k for k in DATA_FIELDS if meta["config"].get(k) != expected[k]]
    if diff:
        raise InvalidInputError(f"data in {data} was generated with a different config ({', '.join(diff)}); "
                                "rerun gen-data")
    targets, by_lang = {}, {}
    recs = io.read_jsonl(data / "prompts.jsonl", io.PROMPTS_FORMAT)
    for _, rec in recs + io.read_jsonl(data / "heldout_prompts.jsonl", io.PROMPTS_FORMAT):
        targets[int(rec["prompt_id"])] = tuple(rec["target"])
        by_lang.setdefault(rec["language"], {})[int(rec["prompt_id"])] = tuple(rec["target"])
    tasks = []
    for t in json.loads((data / "tasks.json").read_text())["tasks"]:
        tasks.append(LanguageTask(t["name"], tuple(t["region"]), int(t["direction"]), tuple(t["train_prompts"]),
                                  tuple(t["heldout_prompts"]), by_lang.get(t["name"], {})))
    heldout = {t.name: [] for t in tasks}
    for _, rec in io.read_jsonl(data / "heldout_pairs.jsonl", io.PAIRS_FORMAT):
        heldout[rec["language"]].append(PreferencePair.from_dict(rec))
    judge = JudgeModel(targets, cfg.judge_noise_std, derive_seed(cfg.seed, "judge"))
    return Scenario(tuple(tasks), judge, io.load_policy(data / "seed_policy.ckpt"),
                    {k: tuple(v) for k, v in heldout.items()})


# ---------------------------------------------------------------- train

def _none_if_nan(x):
    return None if x is None or x != x else x


def metrics_records(rec) -> list[dict]:
    return [{"round": rec.round, "language": s.language,
             "preference_accuracy": _none_if_nan(s.heldout_accuracy),
             "mean_lp_dpo_loss": _none_if_nan(s.heldout_loss),
             "retained_count": s.retained, "pair_count": s.pairs,
             "conflict_count": s.conflicts, "mean_congrad_score": s.mean_congrad_score,
             "store_step": s.store_step}
            for s in rec.stats]


def filter_records(rec) -> list[dict]:
    return [{"round": rec.round, "language": s.language, "sample_id": s.sample_id, "kind": s.kind,
             "score": s.score, "retained": s.sample_id in rec.retained.get(s.language, ())}
            for s in rec.scores]


def conflict_records(rec) -> list[dict]:
    return [{"round": rec.round, **r.to_dict()} for r in rec.conflict_records]


def _summary_json(rec) -> dict:
    s = round_summary(rec)
    s["joint_heldout_loss"] = _none_if_nan(s["joint_heldout_loss"])
    for lang in s["languages"]:
        lang["heldout_accuracy"] = _none_if_nan(lang["heldout_accuracy"])
        lang["heldout_loss"] = _none_if_nan(lang["heldout_loss"])
    return s


def _write_manifest(arm_dir: Path, cfg: ExperimentConfig, status: str, completed: int, error: str | None = None):
    files = sorted(str(p.relative_to(arm_dir)) for p in arm_dir.rglob("*")
                   if p.is_file() and p.name not in ("manifest.json", ".lock"))
    manifest = {"format": "congrad.manifest", "version": io.FORMAT_VERSION, "status": status,
                "arm": arm_name(cfg), "rounds_planned": cfg.rounds, "rounds_completed": completed, "files": files}
    if error:
        manifest["error"] = error
    (arm_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def latest_checkpoint(arm_dir: Path) -> Path | None:
    ckpts = sorted((arm_dir / "checkpoints").glob("round_*.ckpt"))
    return ckpts[-1] if ckpts else None


def train(cfg: ExperimentConfig, out: Path, resume: bool = False, stop_after: int | None = None) -> Path:
    """Run (or resume) one filter arm; returns the arm directory.

    ``stop_after`` ends the run early after that round, leaving a resumable
    partial run (used to exercise resumption).
    """
    out = Path(out)
    scenario = load_scenario(cfg, out)
    arm_dir = out / arm_name(cfg)
    with directory_lock(arm_dir):
        (arm_dir / "checkpoints").mkdir(exist_ok=True)
        (arm_dir / "pairs").mkdir(exist_ok=True)
        start = None
        if resume and (ckpt := latest_checkpoint(arm_dir)) is not None:
            start, meta = io.load_round_checkpoint(ckpt)
            done = int(meta["completed_round"])
            for name, fmt in (("metrics.jsonl", io.METRICS_FORMAT), ("rounds.jsonl", io.ROUNDS_FORMAT),
                              ("filter_report.jsonl", io.FILTER_REPORT_FORMAT),
                              ("conflicts.jsonl", io.CONFLICT_REPORT_FORMAT)):
                io.truncate_jsonl(arm_dir / name, fmt, done)
            for stale in list((arm_dir / "checkpoints").glob("round_*.ckpt")) + list((arm_dir / "pairs").glob("round_*.jsonl")):
                if int(stale.stem.split("_")[1]) > done:
                    stale.unlink()
            log.info("resuming %s after round %d", arm_dir, done)
        else:
            for stale in arm_dir.rglob("*"):
                if stale.is_file() and stale.name != ".lock":
                    stale.unlink()
            (arm_dir / "config.json").write_text(cfg.to_json())
            for name, fmt in (("metrics.jsonl", io.METRICS_FORMAT), ("rounds.jsonl", io.ROUNDS_FORMAT),
                              ("filter_report.jsonl", io.FILTER_REPORT_FORMAT),
                              ("conflicts.jsonl", io.CONFLICT_REPORT_FORMAT)):
                io.write_jsonl(arm_dir / name, fmt, [])
        completed = [start.round - 1 if start else 0]

        def persist(state: RoundState):
            rec = state.last_record
            t = rec.round
            io.write_jsonl(arm_dir / "pairs" / f"round_{t:03d}.jsonl", io.PAIRS_FORMAT,
                           [{"round": t, **p.to_dict()} for l in sorted(rec.pairs) for p in rec.pairs[l]])
            io.write_jsonl(arm_dir / "metrics.jsonl", io.METRICS_FORMAT, metrics_records(rec), mode="a")
            io.write_jsonl(arm_dir / "rounds.jsonl", io.ROUNDS_FORMAT, [_summary_json(rec)], mode="a")
            io.write_jsonl(arm_dir / "filter_report.jsonl", io.FILTER_REPORT_FORMAT, filter_records(rec), mode="a")
            io.write_jsonl(arm_dir / "conflicts.jsonl", io.CONFLICT_REPORT_FORMAT, conflict_records(rec), mode="a")
            io.save_round_checkpoint(arm_dir / "checkpoints" / f"round_{t:03d}.ckpt", state, cfg.to_json())
            completed[0] = t
            if stop_after is not None and t >= stop_after:
                raise _StopEarly()

        try:
            run_experiment(cfg, scenario, start=start, on_round_end=persist)
        except _StopEarly:
            _write_manifest(arm_dir, cfg, "partial", completed[0], "stopped early on request")
            return arm_dir
        except Exception as exc:
            _write_manifest(arm_dir, cfg, "partial", completed[0], f"{type(exc).__name__}: {exc}")
            raise
        rounds = [obj for _, obj in io.read_jsonl(arm_dir / "rounds.jsonl", io.ROUNDS_FORMAT)]
        report = {"format": "congrad.experiment-report", "version": io.FORMAT_VERSION, "arm": arm_name(cfg),
                  "filter": cfg.to_dict()["filter"], "seed": cfg.seed, "rounds": rounds}
        (arm_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n")
        _write_manifest(arm_dir, cfg, "complete", completed[0])
    return arm_dir


class _StopEarly(Exception):
    pass
