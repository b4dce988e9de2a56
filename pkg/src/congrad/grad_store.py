"""Per-language EMA of gradients kept in compressed low-rank form.

Each update runs the decompress-update-recompress cycle one parameter matrix at
a time: rebuild the previous EMA of that matrix from its factors, apply
``G = gamma * G_prev + (1 - gamma) * g`` densely, and refactorize with
:func:`~congrad.lowrank.power_iterate`. 1-D parameters are kept dense.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from .errors import EmptyStoreError, InvalidInputError, NonFiniteGradientError
from .lowrank import LowRankFactors, flatten_concat, power_iterate, reconstruct
from .seeding import derive_seed

log = logging.getLogger(__name__)

Slot = Union[LowRankFactors, np.ndarray]


@dataclass(frozen=True)
class EmaConfig:
    gamma: float = 0.9
    rank: int = 64
    power_iters: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise InvalidInputError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.rank < 1:
            raise InvalidInputError(f"rank must be >= 1, got {self.rank}")
        if self.power_iters < 1:
            raise InvalidInputError(f"power_iters must be >= 1, got {self.power_iters}")


class DenseTracker:
    """Counts parameter-sized dense matrices alive inside :func:`ema_update`."""

    def __init__(self):
        self.live = 0
        self.peak = 0

    def acquire(self, n: int = 1):
        self.live += n
        self.peak = max(self.peak, self.live)

    def release(self, n: int = 1):
        self.live -= n


def effective_rank(shape: tuple[int, int], rank: int) -> int:
    return min(rank, shape[0], shape[1])


@dataclass(frozen=True)
class LanguageGradientStore:
    language: str
    shapes: tuple[tuple[int, ...], ...]
    slots: tuple[Slot, ...]
    step: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    @classmethod
    def empty(cls, language: str, shapes: Sequence[Sequence[int]], cfg: EmaConfig) -> "LanguageGradientStore":
        """A store holding ``G_0 = 0`` for every registered parameter."""
        shapes = tuple(tuple(int(d) for d in s) for s in shapes)
        slots = []
        for s in shapes:
            if len(s) == 2:
                slots.append(LowRankFactors.zeros(s[0], s[1], effective_rank(s, cfg.rank)))
            elif len(s) == 1:
                slots.append(np.zeros(s))
            else:
                raise InvalidInputError(f"unsupported parameter shape {s}")
        return cls(language=str(language), shapes=shapes, slots=tuple(slots), step=0)

    def dense(self, index: int) -> np.ndarray:
        slot = self.slots[index]
        return reconstruct(slot) if isinstance(slot, LowRankFactors) else slot.copy()

    def factor_floats(self) -> int:
        """Number of stored floats (memory footprint of the compressed EMA)."""
        return sum(s.P.size + s.Q.size if isinstance(s, LowRankFactors) else s.size for s in self.slots)


def _check_grads(store: LanguageGradientStore, grads: Sequence) -> list[np.ndarray]:
    if len(grads) != len(store.shapes):
        raise InvalidInputError(f"expected {len(store.shapes)} gradient matrices, got {len(grads)}")
    out = []
    for i, (g, shape) in enumerate(zip(grads, store.shapes)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != shape:
            raise InvalidInputError(f"gradient {i} has shape {g.shape}, expected {shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"gradient {i} for language {store.language!r} is not finite")
        out.append(g)
    return out


def ema_update(store: LanguageGradientStore, minibatch_grad: Sequence, cfg: EmaConfig,
               tracker: DenseTracker | None = None) -> LanguageGradientStore:
    """Fold one minibatch gradient into the store; returns a new store.

    Gradients are validated up front, so a rejected update leaves ``store``
    untouched.
    """
    grads = _check_grads(store, minibatch_grad)
    gamma = cfg.gamma
    new_slots = []
    for idx, (slot, g) in enumerate(zip(store.slots, grads)):
        if not isinstance(slot, LowRankFactors):
            new_slots.append(gamma * slot + (1.0 - gamma) * g)
            continue
        if tracker is not None:
            tracker.acquire(2)  # rebuilt EMA + incoming gradient
        dense = reconstruct(slot)
        dense *= gamma
        dense += (1.0 - gamma) * g
        seed = derive_seed(cfg.seed, "ema", store.language, idx, store.step)
        new_slots.append(power_iterate(dense, slot.rank, cfg.power_iters, seed))
        del dense
        if tracker is not None:
            tracker.release(2)
    return replace(store, slots=tuple(new_slots), step=store.step + 1)


def snapshot(store: LanguageGradientStore) -> np.ndarray:
    """Whole-model flat EMA gradient rebuilt from the stored factors."""
    if store.step < 1:
        raise EmptyStoreError(f"store for {store.language!r} has never been updated")
    return flatten_concat([store.dense(i) for i in range(len(store.slots))])


def dense_ema(grads: Sequence[np.ndarray], gamma: float) -> np.ndarray:
    """Uncompressed EMA of a gradient stream starting from zero (reference path)."""
    G = np.zeros_like(np.asarray(grads[0], dtype=np.float64))
    for g in grads:
        G = gamma * G + (1.0 - gamma) * np.asarray(g, dtype=np.float64)
    return G
