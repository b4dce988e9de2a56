"""PCGrad-style conflict resolution across per-language gradients."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidInputError
from .lowrank import DEGENERATE_NORM, cosine_and_flag
from .seeding import derive_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConflictRecord:
    language: str
    other: str
    cosine: float
    projected: bool

    def to_dict(self) -> dict:
        return {"pair": [self.language, self.other], "cosine": self.cosine, "projected": self.projected}


@dataclass(frozen=True)
class ConsensusGradient:
    vector: np.ndarray
    conflicts_resolved: int
    language_count: int
    records: tuple[ConflictRecord, ...] = ()

    def conflicts_for(self, language: str) -> int:
        return sum(1 for r in self.records if r.language == language and r.projected)


def _project_away(g: np.ndarray, others: Sequence[np.ndarray]) -> tuple[np.ndarray, list[tuple[int, float, bool]]]:
    """Single ordered sweep; returns the de-conflicted vector and one
    ``(index, cosine, projected)`` entry per non-degenerate other."""
    g = g.copy()
    trace = []
    for j, other in enumerate(others):
        sq = float(np.dot(other, other))
        if np.sqrt(sq) < DEGENERATE_NORM:
            log.warning("skipping projection against zero-norm gradient (index %d)", j)
            continue
        dot = float(np.dot(g, other))
        cos, _ = cosine_and_flag(g, other)
        if dot < 0.0:
            g -= (dot / sq) * other
            trace.append((j, cos, True))
        else:
            trace.append((j, cos, False))
    return g, trace


def _check_same_length(vectors: Sequence[np.ndarray]):
    lengths = {v.shape for v in vectors}
    if len(lengths) != 1 or any(v.ndim != 1 for v in vectors):
        raise InvalidInputError(f"gradients must be 1-D with equal lengths, got shapes {sorted(lengths)}")
    if not all(np.all(np.isfinite(v)) for v in vectors):
        raise InvalidInputError("gradients contain non-finite entries")


def deconflict_one(g, others: Sequence) -> np.ndarray:
    """Project ``g`` onto the normal plane of each conflicting vector in ``others``.

    Others are visited in the given order; a vector conflicts when its dot
    product with the running result is negative.
    """
    g = np.asarray(g, dtype=np.float64)
    others = [np.asarray(o, dtype=np.float64) for o in others]
    if not others:
        raise InvalidInputError("others must be non-empty")
    _check_same_length([g, *others])
    return _project_away(g, others)[0]


def consensus(tasks: Mapping[str, np.ndarray], order_seed: int = 0) -> ConsensusGradient:
    """Sum of per-language de-conflicted gradients.

    For each language (in sorted order) the other languages are visited in an
    order shuffled by a generator derived from ``order_seed``.
    """
    if not tasks:
        raise InvalidInputError("no task gradients given")
    langs = sorted(tasks)
    vecs = {l: np.asarray(tasks[l], dtype=np.float64) for l in langs}
    _check_same_length(list(vecs.values()))
    if len(langs) == 1:
        return ConsensusGradient(vecs[langs[0]].copy(), 0, 1)

    total = np.zeros_like(vecs[langs[0]])
    records = []
    for i, lang in enumerate(langs):
        others = [l for l in langs if l != lang]
        order = derive_rng(order_seed, "pcgrad", i).permutation(len(others))
        others = [others[j] for j in order]
        g_pc, trace = _project_away(vecs[lang], [vecs[o] for o in others])
        records.extend(ConflictRecord(lang, others[j], cos, projected) for j, cos, projected in trace)
        total += g_pc
    n_proj = sum(r.projected for r in records)
    log.debug("consensus over %d languages: %d projections", len(langs), n_proj)
    return ConsensusGradient(total, n_proj, len(langs), tuple(records))
