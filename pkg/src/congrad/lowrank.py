"""Low-rank factorization by subspace (power) iteration, plus flat-vector helpers.

Matrices are plain 2-D float64 ``numpy`` arrays; a "flat vector" is the 1-D
row-major concatenation of one or more of them in a fixed parameter order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, InvalidRankError

log = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-12
# relative to the largest column norm of the block being orthonormalized
ORTHO_TOL = 1e-10


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 2-D array, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return M


@dataclass(frozen=True)
class LowRankFactors:
    """Rank-``r`` pair with ``M ~= P @ Q.T``; ``P`` is ``n x r``, ``Q`` is ``m x r``."""

    P: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64)
        Q = np.asarray(self.Q, dtype=np.float64)
        if P.ndim != 2 or Q.ndim != 2:
            raise InvalidInputError("factors must be 2-D")
        if P.shape[1] != Q.shape[1]:
            raise InvalidInputError(f"factor ranks differ: {P.shape[1]} vs {Q.shape[1]}")
        r = P.shape[1]
        if r < 1 or r > min(P.shape[0], Q.shape[0]):
            raise InvalidRankError(f"rank {r} invalid for a {P.shape[0]}x{Q.shape[0]} matrix")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(Q))):
            raise InvalidInputError("factors contain non-finite entries")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Q", Q)

    @property
    def rank(self) -> int:
        return self.P.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.P.shape[0], self.Q.shape[0])

    @classmethod
    def zeros(cls, rows: int, cols: int, rank: int) -> "LowRankFactors":
        return cls(np.zeros((rows, rank)), np.zeros((cols, rank)))


def _orthonormalize(A: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal basis for the columns of ``A`` (same shape).

    Columns that are numerically dependent on the earlier ones are replaced by
    fresh random directions orthogonal to the rest, so rank-deficient input never
    yields NaN or duplicated basis vectors.
    """
    Qm, R = np.linalg.qr(A)
    diag = np.abs(np.diag(R))
    scale = np.linalg.norm(A, axis=0).max()
    bad = diag <= ORTHO_TOL * scale if scale > 0 else np.ones_like(diag, dtype=bool)
    if not bad.any():
        return Qm
    good = ~bad
    for j in np.flatnonzero(bad):
        v = rng.standard_normal(A.shape[0])
        basis = Qm[:, good]
        for _ in range(2):
            v -= basis @ (basis.T @ v)
        Qm[:, j] = v / np.linalg.norm(v)
        good[j] = True
    return Qm


def power_iterate(M, rank: int, iters: int = 3, seed: int = 0) -> LowRankFactors:
    """Rank-``rank`` factors of ``M`` via ``iters`` rounds of subspace iteration.

    ``Q`` starts as a seeded Gaussian ``m x r`` block; each round sets
    ``P = orth(M Q)`` then ``Q = orth(M.T P)``. The returned ``P`` is ``M Q``,
    so ``P Q.T`` is ``M`` projected onto the recovered row subspace and is exact
    whenever ``rank(M) <= rank``.
    """
    M = as_matrix(M, "M")
    n, m = M.shape
    if not isinstance(rank, (int, np.integer)) or rank < 1 or rank > min(n, m):
        raise InvalidRankError(f"rank {rank} invalid for a {n}x{m} matrix")
    if iters < 1:
        raise InvalidInputError(f"iters must be >= 1, got {iters}")
    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((m, rank))
    for _ in range(iters):
        P = _orthonormalize(M @ Q, rng)
        Q = _orthonormalize(M.T @ P, rng)
    return LowRankFactors(M @ Q, Q)


def reconstruct(F: LowRankFactors) -> np.ndarray:
    return F.P @ F.Q.T


def cosine_and_flag(a, b) -> tuple[float, bool]:
    """Cosine similarity and whether it was degenerate (a near-zero vector)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InvalidInputError(f"length mismatch: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < DEGENERATE_NORM or nb < DEGENERATE_NORM:
        return 0.0, True
    c = float(np.dot(a, b) / (na * nb))
    return min(1.0, max(-1.0, c)), False


def cosine_flat(a, b) -> float:
    """``a.b / (|a||b|)``; 0.0 when either vector has norm below 1e-12."""
    c, degenerate = cosine_and_flag(a, b)
    if degenerate:
        log.debug("degenerate cosine (zero-norm vector)")
    return c


def flatten_concat(matrices: Sequence) -> np.ndarray:
    if len(matrices) == 0:
        raise InvalidInputError("cannot flatten an empty list of matrices")
    return np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in matrices])


def unflatten(vec, shapes: Sequence[tuple[int, ...]]) -> list[np.ndarray]:
    """Inverse of :func:`flatten_concat` for the given parameter shapes."""
    vec = np.asarray(vec, dtype=np.float64)
    sizes = [int(np.prod(s)) for s in shapes]
    if vec.ndim != 1 or vec.size != sum(sizes):
        raise InvalidInputError(f"vector of length {vec.size} does not match shapes {list(shapes)}")
    out = []
    offset = 0
    for shape, size in zip(shapes, sizes):
        out.append(vec[offset:offset + size].reshape(shape).copy())
        offset += size
    return out
