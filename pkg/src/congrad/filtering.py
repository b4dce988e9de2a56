"""Sample scoring and per-language top-fraction selection.

Besides the consensus-gradient score, the baseline scores (reward margin,
length margin, random) are provided so that every arm goes through the same
:func:`select` path.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .consensus import ConsensusGradient
from .errors import InvalidInputError
from .lowrank import cosine_flat
from .preference import PreferencePair
from .seeding import derive_rng

KINDS = ("congrad", "reward_margin", "length_margin", "random")
DIRECTIONS = ("max", "min")


@dataclass(frozen=True)
class FilterScore:
    sample_id: int
    language: str
    score: float
    kind: str = "congrad"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown filter kind {self.kind!r}")
        if not math.isfinite(self.score):
            raise InvalidInputError(f"score for sample {self.sample_id} is not finite")
        if self.kind == "congrad" and not -1.0 <= self.score <= 1.0:
            raise InvalidInputError(f"congrad score {self.score} outside [-1, 1]")


@dataclass(frozen=True)
class FilterConfig:
    retain_fraction: float = 0.5
    direction: str = "max"
    kind: str = "congrad"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.retain_fraction <= 1.0:
            raise InvalidInputError(f"retain_fraction must lie in (0, 1], got {self.retain_fraction}")
        if self.direction not in DIRECTIONS:
            raise InvalidInputError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if self.kind not in KINDS:
            raise InvalidInputError(f"kind must be one of {KINDS}, got {self.kind!r}")

    @property
    def arm(self) -> str:
        return f"{self.kind}-{self.direction}"


def quota(n: int, retain_fraction: float) -> int:
    """``ceil(retain_fraction * n)``, at least 1."""
    if n < 1:
        raise InvalidInputError("cannot take a quota of an empty list")
    # tolerate products like 0.7 * 10 = 7.000000000000001
    k = math.ceil(retain_fraction * n - 1e-9)
    return min(n, max(1, k))


def congrad_score(sample_grad, consensus: ConsensusGradient) -> float:
    sample_grad = np.asarray(sample_grad, dtype=np.float64)
    if sample_grad.shape != consensus.vector.shape:
        raise InvalidInputError(
            f"sample gradient length {sample_grad.size} != consensus length {consensus.vector.size}")
    return cosine_flat(sample_grad, consensus.vector)


def baseline_score(pair: PreferencePair, kind: str, seed: int = 0) -> float:
    """Reward margin, length margin, or a seeded uniform draw in ``[0, 1)``.

    The random score depends only on ``seed`` and the pair's language and
    prompt id, so it reproduces exactly across runs.
    """
    if kind == "reward_margin":
        return float(pair.chosen_score - pair.rejected_score)
    if kind == "length_margin":
        return float(len(pair.chosen) - len(pair.rejected))
    if kind == "random":
        return float(derive_rng(seed, "random-filter", pair.language, pair.prompt_id).random())
    raise InvalidInputError(f"{kind!r} is not a baseline filter kind")


def select(scores: Iterable[FilterScore], cfg: FilterConfig) -> dict[str, set[int]]:
    """Per language, keep the ``ceil(rho * N_l)`` best-scoring sample ids.

    "Best" means highest for ``direction="max"`` and lowest for ``"min"``; ties
    go to the smaller sample id.
    """
    by_lang: dict[str, list[FilterScore]] = defaultdict(list)
    for s in scores:
        by_lang[s.language].append(s)
    if not by_lang:
        raise InvalidInputError("no scores to select from")
    sign = -1.0 if cfg.direction == "max" else 1.0
    out = {}
    for lang, items in by_lang.items():
        ids = [s.sample_id for s in items]
        if len(set(ids)) != len(ids):
            raise InvalidInputError(f"duplicate sample ids for language {lang!r}")
        k = quota(len(items), cfg.retain_fraction)
        ranked = sorted(items, key=lambda s: (sign * s.score, s.sample_id))
        out[lang] = {s.sample_id for s in ranked[:k]}
    return out


def score_pairs(pairs: Mapping[str, Sequence[PreferencePair]], cfg: FilterConfig,
                sample_grads=None, consensus: ConsensusGradient | None = None) -> list[FilterScore]:
    """Score every pair (sample id = prompt id) with the configured kind.

    For ``kind="congrad"``, ``sample_grads(lang, pairs)`` must yield one flat
    gradient per pair.
    """
    out = []
    for lang in sorted(pairs):
        items = pairs[lang]
        if cfg.kind == "congrad":
            if consensus is None or sample_grads is None:
                raise InvalidInputError("congrad scoring needs a consensus gradient and sample gradients")
            values = [congrad_score(g, consensus) for g in sample_grads(lang, items)]
        else:
            values = [baseline_score(p, cfg.kind, cfg.seed) for p in items]
        out.extend(FilterScore(p.prompt_id, lang, v, cfg.kind) for p, v in zip(items, values))
    return out
