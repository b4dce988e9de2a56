"""On-disk formats.

Array files (policies, gradient stores, round checkpoints) are a magic line, a
one-line JSON header, then the raw little-endian float64 payload; they carry no
timestamps, so identical contents give identical bytes, and floats round-trip
exactly.  Record files are JSON Lines whose first line is a format header
``{"format": ..., "version": ...}``.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .consensus import ConflictRecord, ConsensusGradient
from .errors import InvalidInputError, ReportParseError
from .grad_store import EmaConfig, LanguageGradientStore
from .lowrank import LowRankFactors
from .preference import ToyPolicy

MAGIC = b"CONGRAD-ARRAYS\n"
FORMAT_VERSION = 1

POLICY_FORMAT = "congrad.policy"
STORES_FORMAT = "congrad.stores"
CHECKPOINT_FORMAT = "congrad.round-checkpoint"
PAIRS_FORMAT = "congrad.pairs"
FILTER_REPORT_FORMAT = "congrad.filter-report"
CONFLICT_REPORT_FORMAT = "congrad.conflict-report"
METRICS_FORMAT = "congrad.metrics"
ROUNDS_FORMAT = "congrad.rounds"
PROMPTS_FORMAT = "congrad.prompts"


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False, separators=(",", ":"))


def write_arrays(path, fmt: str, meta: Mapping, arrays: Mapping[str, np.ndarray]):
    entries = []
    payload = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        payload.append(arr.tobytes())
        offset += arr.nbytes
    header = {"format": fmt, "version": FORMAT_VERSION, "meta": meta, "arrays": entries}
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(dumps(header).encode("utf-8") + b"\n")
        for chunk in payload:
            fh.write(chunk)


def read_arrays(path, fmt: str) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise InvalidInputError(f"{path}: not a congrad array file")
    end = data.index(b"\n", len(MAGIC))
    header = json.loads(data[len(MAGIC):end])
    if header.get("format") != fmt:
        raise InvalidInputError(f"{path}: expected format {fmt!r}, found {header.get('format')!r}")
    if header.get("version") != FORMAT_VERSION:
        raise InvalidInputError(f"{path}: unsupported format version {header.get('version')}")
    body = data[end + 1:]
    arrays = {}
    for e in header["arrays"]:
        raw = body[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return header["meta"], arrays


def _policy_arrays(policy: ToyPolicy, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + "first_token": policy.first_logits, prefix + "bigram": policy.bigram_logits}


def _policy_from(meta: Mapping, arrays: Mapping, prefix: str = "") -> ToyPolicy:
    return ToyPolicy(int(meta["vocab_size"]), int(meta["max_len"]), arrays[prefix + "first_token"],
                     arrays[prefix + "bigram"])


def save_policy(path, policy: ToyPolicy):
    meta = {"vocab_size": policy.vocab_size, "max_len": policy.max_len, "param_order": ["first_token", "bigram"]}
    write_arrays(path, POLICY_FORMAT, meta, _policy_arrays(policy))


def load_policy(path) -> ToyPolicy:
    meta, arrays = read_arrays(path, POLICY_FORMAT)
    return _policy_from(meta, arrays)


def _store_payload(stores: Iterable[LanguageGradientStore]) -> tuple[list, dict]:
    metas, arrays = [], {}
    for si, store in enumerate(stores):
        kinds = []
        for j, slot in enumerate(store.slots):
            if isinstance(slot, LowRankFactors):
                arrays[f"store{si}.{j}.P"] = slot.P
                arrays[f"store{si}.{j}.Q"] = slot.Q
                kinds.append("factors")
            else:
                arrays[f"store{si}.{j}.dense"] = slot
                kinds.append("dense")
        metas.append({"language": store.language, "step": store.step,
                      "shapes": [list(s) for s in store.shapes], "slots": kinds})
    return metas, arrays


def _stores_from(metas: list, arrays: Mapping) -> dict[str, LanguageGradientStore]:
    out = {}
    for si, m in enumerate(metas):
        slots = []
        for j, kind in enumerate(m["slots"]):
            if kind == "factors":
                slots.append(LowRankFactors(arrays[f"store{si}.{j}.P"], arrays[f"store{si}.{j}.Q"]))
            else:
                slots.append(arrays[f"store{si}.{j}.dense"])
        out[m["language"]] = LanguageGradientStore(m["language"], tuple(tuple(s) for s in m["shapes"]),
                                                   tuple(slots), int(m["step"]))
    return out


def save_stores(path, stores: Iterable[LanguageGradientStore], cfg: EmaConfig):
    metas, arrays = _store_payload(stores)
    meta = {"ema": {"gamma": cfg.gamma, "rank": cfg.rank, "power_iters": cfg.power_iters, "seed": cfg.seed},
            "stores": metas}
    write_arrays(path, STORES_FORMAT, meta, arrays)


def load_stores(path) -> tuple[dict[str, LanguageGradientStore], EmaConfig]:
    meta, arrays = read_arrays(path, STORES_FORMAT)
    return _stores_from(meta["stores"], arrays), EmaConfig(**meta["ema"])


def save_round_checkpoint(path, state, config_json: str):
    """Everything needed to resume after a completed round: the trained policy,
    the EMA stores and the consensus gradient they produced."""
    c = state.consensus_prev
    store_metas, arrays = _store_payload(state.stores[l] for l in sorted(state.stores))
    arrays.update(_policy_arrays(state.policy, "policy."))
    arrays["consensus"] = c.vector
    meta = {
        "completed_round": state.round - 1,
        "next_round": state.round,
        "rng_seed": state.rng_seed,
        "vocab_size": state.policy.vocab_size,
        "max_len": state.policy.max_len,
        "consensus": {"conflicts_resolved": c.conflicts_resolved, "language_count": c.language_count,
                      "records": [[r.language, r.other, r.cosine, r.projected] for r in c.records]},
        "consensus_steps": dict(sorted(state.consensus_steps.items())),
        "stores": store_metas,
        "config": json.loads(config_json),
    }
    write_arrays(path, CHECKPOINT_FORMAT, meta, arrays)


def load_round_checkpoint(path):
    """Rebuild the :class:`~congrad.selfloop.RoundState` that starts the next round."""
    from .selfloop import RoundState

    meta, arrays = read_arrays(path, CHECKPOINT_FORMAT)
    policy = _policy_from(meta, arrays, "policy.")
    cm = meta["consensus"]
    cons = ConsensusGradient(arrays["consensus"], int(cm["conflicts_resolved"]), int(cm["language_count"]),
                             tuple(ConflictRecord(a, b, float(c), bool(p)) for a, b, c, p in cm["records"]))
    state = RoundState(round=int(meta["next_round"]), policy=policy, ref_policy=policy,
                       consensus_prev=cons, consensus_steps={k: int(v) for k, v in meta["consensus_steps"].items()},
                       stores=_stores_from(meta["stores"], arrays), rng_seed=int(meta["rng_seed"]))
    return state, meta


def write_jsonl(path, fmt: str, records: Iterable[Mapping], mode: str = "w"):
    path = Path(path)
    new = mode == "w" or not path.exists() or path.stat().st_size == 0
    with open(path, mode, encoding="utf-8") as fh:
        if new:
            fh.write(dumps({"format": fmt, "version": FORMAT_VERSION}) + "\n")
        for rec in records:
            fh.write(dumps(rec) + "\n")


def read_jsonl(path, fmt: str) -> list[tuple[int, dict]]:
    """``(line number, record)`` pairs; malformed lines raise a line-numbered error."""
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"{path}: file not found")
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ReportParseError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ReportParseError(path, lineno, "expected a JSON object")
            if lineno == 1:
                if obj.get("format") != fmt:
                    raise ReportParseError(path, 1, f"expected format header {fmt!r}, found {obj.get('format')!r}")
                if obj.get("version") != FORMAT_VERSION:
                    raise ReportParseError(path, 1, f"unsupported version {obj.get('version')!r}")
                continue
            out.append((lineno, obj))
    return out


def truncate_jsonl(path, fmt: str, max_round: int):
    """Drop records with ``round > max_round`` (used when resuming)."""
    path = Path(path)
    if not path.exists():
        return
    kept = [obj for _, obj in read_jsonl(path, fmt) if int(obj["round"]) <= max_round]
    write_jsonl(path, fmt, kept)
