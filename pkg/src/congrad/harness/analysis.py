"""Offline analysis of recorded filter reports and metrics."""
from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import io
from ..errors import ReportParseError
from ..filtering import FilterConfig, FilterScore, quota, select

FILTER_FIELDS = {"round": int, "language": str, "sample_id": int, "kind": str, "score": float, "retained": bool}
DEFAULT_RHOS = (0.25, 0.5, 0.75)


def load_filter_report(path) -> list[dict]:
    out = []
    for lineno, rec in io.read_jsonl(path, io.FILTER_REPORT_FORMAT):
        for name, typ in FILTER_FIELDS.items():
            if name not in rec:
                raise ReportParseError(path, lineno, f"missing field {name!r}")
            value = rec[name]
            ok = isinstance(value, typ) or (typ is float and isinstance(value, int) and not isinstance(value, bool))
            if not ok:
                raise ReportParseError(path, lineno, f"field {name!r} should be {typ.__name__}")
        out.append(rec)
    return out


def _histogram(values: np.ndarray, kind: str, bins: int):
    lo, hi = (-1.0, 1.0) if kind == "congrad" else (float(values.min()), float(values.max()))
    if hi <= lo:
        hi = lo + 1.0
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return counts.tolist(), edges.tolist()


def filter_analyze(records: Sequence[dict], rhos: Sequence[float] = DEFAULT_RHOS, bins: int = 10) -> dict:
    """Per (round, language): score histogram, recorded retention, and offline
    re-selection at each retain fraction in ``rhos``."""
    groups = defaultdict(list)
    for r in records:
        groups[(r["round"], r["language"])].append(r)
    direction = "max"
    rows = []
    for (rnd, lang), recs in sorted(groups.items()):
        kind = recs[0]["kind"]
        values = np.array([r["score"] for r in recs], dtype=np.float64)
        counts, edges = _histogram(values, kind, bins)
        retained = {r["sample_id"] for r in recs if r["retained"]}
        # the recorded retained set tells us which end of the ranking was kept
        if retained and len(retained) < len(recs):
            kept = values[[r["retained"] for r in recs]].mean()
            dropped = values[[not r["retained"] for r in recs]].mean()
            direction = "max" if kept >= dropped else "min"
        scores = [FilterScore(r["sample_id"], lang, r["score"], kind) for r in recs]
        sweep = []
        for rho in rhos:
            chosen = select(scores, FilterConfig(rho, direction, kind))[lang]
            inter = len(chosen & retained)
            union = len(chosen | retained) or 1
            sweep.append({"rho": rho, "retained_count": len(chosen), "quota": quota(len(recs), rho),
                          "retention_rate": len(chosen) / len(recs), "jaccard_vs_recorded": inter / union,
                          "sample_ids": sorted(chosen)})
        rows.append({"round": rnd, "language": lang, "kind": kind, "direction": direction, "n": len(recs),
                     "recorded_retained": len(retained), "score_mean": float(values.mean()),
                     "histogram": {"counts": counts, "edges": edges}, "sweep": sweep})
    return {"format": "congrad.filter-analysis", "version": io.FORMAT_VERSION, "groups": rows}


def format_filter_analysis(analysis: dict) -> str:
    lines = ["round  language  kind           n    kept  mean_score  " +
             "  ".join(f"rho={s['rho']:g}" for s in (analysis["groups"][0]["sweep"] if analysis["groups"] else []))]
    for g in analysis["groups"]:
        sweep = "  ".join(f"{s['retained_count']:>7d}" for s in g["sweep"])
        lines.append(f"{g['round']:>5d}  {g['language']:<8s}  {g['kind']:<13s} {g['n']:>4d}  "
                     f"{g['recorded_retained']:>4d}  {g['score_mean']:>10.4f}  {sweep}")
    if not analysis["groups"]:
        lines.append("(no filter records: round 1 is never filtered)")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- report

def _metrics_path(p: Path) -> Path:
    return p / "metrics.jsonl" if p.is_dir() else p


def load_metrics(path) -> list[dict]:
    return [rec for _, rec in io.read_jsonl(_metrics_path(Path(path)), io.METRICS_FORMAT)]


def round_table(records: Sequence[dict]) -> list[dict]:
    """One row per round: joint held-out loss (mean over languages) and mean accuracy."""
    by_round = defaultdict(list)
    for r in records:
        by_round[r["round"]].append(r)
    rows = []
    for rnd in sorted(by_round):
        recs = by_round[rnd]
        losses = [r["mean_lp_dpo_loss"] for r in recs if r["mean_lp_dpo_loss"] is not None]
        accs = [r["preference_accuracy"] for r in recs if r["preference_accuracy"] is not None]
        rows.append({"round": rnd,
                     "joint_loss": sum(losses) / len(losses) if losses else None,
                     "accuracy": sum(accs) / len(accs) if accs else None,
                     "retained": sum(r["retained_count"] for r in recs),
                     "conflicts": sum(r["conflict_count"] for r in recs)})
    return rows


def _fmt(x) -> str:
    return "-" if x is None else repr(float(x))


def render_report(arms: dict[str, list[dict]]) -> str:
    """Markdown tables: rounds as columns, one row per arm (loss and accuracy)."""
    tables = {name: round_table(recs) for name, recs in arms.items()}
    if not any(tables.values()):
        return "# ConGrad experiment report\n\nEmpty report: no metrics records were found.\n"
    rounds = sorted({row["round"] for rows in tables.values() for row in rows})
    head = "| arm | " + " | ".join(f"round {r}" for r in rounds) + " |"
    sep = "|---|" + "---|" * len(rounds)
    out = ["# ConGrad experiment report", ""]
    for title, key in (("Held-out joint LP-DPO loss", "joint_loss"), ("Held-out preference accuracy", "accuracy"),
                       ("Trained pairs", "retained"), ("Conflicting language pairs", "conflicts")):
        out += [f"## {title}", "", head, sep]
        for name, rows in tables.items():
            by_round = {row["round"]: row[key] for row in rows}
            out.append(f"| {name} | " + " | ".join(_fmt(by_round.get(r)) for r in rounds) + " |")
        out.append("")
    final = [(name, rows[-1]["joint_loss"]) for name, rows in tables.items() if rows and rows[-1]["joint_loss"] is not None]
    if final:
        out += ["## Final held-out joint loss (ascending)", ""]
        out += [f"{i}. {name}: {_fmt(v)}" for i, (name, v) in enumerate(sorted(final, key=lambda x: x[1]), 1)]
        out.append("")
    return "\n".join(out)


def write_series(arms: dict[str, list[dict]], out_dir: Path) -> list[Path]:
    """Plot-ready CSV per arm: round, language, loss, accuracy, retained, conflicts."""
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, recs in arms.items():
        path = out_dir / f"series_{name}.csv"
        lines = ["round,language,mean_lp_dpo_loss,preference_accuracy,retained_count,conflict_count"]
        for r in sorted(recs, key=lambda r: (r["round"], r["language"])):
            lines.append(f"{r['round']},{r['language']},{_fmt(r['mean_lp_dpo_loss'])},"
                         f"{_fmt(r['preference_accuracy'])},{r['retained_count']},{r['conflict_count']}")
        for row in round_table(recs):
            lines.append(f"{row['round']},__joint__,{_fmt(row['joint_loss'])},{_fmt(row['accuracy'])},"
                         f"{row['retained']},{row['conflicts']}")
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    return paths


def write_report(metric_paths: Sequence, out_dir: Path) -> Path:
    arms = {}
    for p in metric_paths:
        p = Path(p)
        name = p.name if p.is_dir() else p.parent.name
        arms[name] = load_metrics(p)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.md"
    path.write_text(render_report(arms))
    write_series(arms, out_dir)
    (out_dir / "report_tables.json").write_text(
        json.dumps({name: round_table(recs) for name, recs in arms.items()}, indent=2, sort_keys=True) + "\n")
    return path


def rho_sweep(cfg, out, rhos: Sequence[float] = DEFAULT_RHOS, arms: Sequence[str] = ("congrad-max",)) -> dict:
    """Train each arm at every retain fraction and compare final held-out losses."""
    from .runner import apply_arm, train

    rows = []
    for arm in arms:
        for rho in rhos:
            arm_dir = train(apply_arm(cfg, arm, rho), out)
            table = round_table(load_metrics(arm_dir))
            rows.append({"arm": arm, "rho": rho, "dir": arm_dir.name,
                         "final_joint_loss": table[-1]["joint_loss"] if table else None})
    return {"format": "congrad.rho-sweep", "version": io.FORMAT_VERSION, "rows": rows}


def render_rho_sweep(sweep: dict) -> str:
    out = ["| arm | rho | final held-out joint loss |", "|---|---|---|"]
    out += [f"| {r['arm']} | {r['rho']:g} | {_fmt(r['final_joint_loss'])} |" for r in sweep["rows"]]
    return "\n".join(out) + "\n"
