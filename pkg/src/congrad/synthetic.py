"""Synthetic gradient streams for checking compression fidelity.

Real gradient matrices have rapidly decaying spectra; i.i.d. Gaussian
matrices do not, and no rank-64 sketch of a 256x256 Gaussian matrix keeps more
than about half of its energy.  Streams here share a fixed pair of singular
bases with a power-law spectrum ``s_i = i**-decay``, jitter the singular values
per step and add a small isotropic noise floor.
"""
from __future__ import annotations

import numpy as np

from .grad_store import EmaConfig, LanguageGradientStore, dense_ema, ema_update, snapshot
from .lowrank import cosine_flat
from .seeding import derive_rng


def gradient_stream(n: int = 256, m: int = 256, steps: int = 20, *, decay: float = 0.5, jitter: float = 0.5,
                    noise: float = 0.05, seed: int = 0) -> list[np.ndarray]:
    rng = derive_rng(seed, "stream")
    k = min(n, m)
    U, _ = np.linalg.qr(rng.standard_normal((n, k)))
    V, _ = np.linalg.qr(rng.standard_normal((m, k)))
    s = np.arange(1, k + 1, dtype=np.float64) ** -decay
    out = []
    for _ in range(steps):
        c = s * (1.0 + jitter * rng.standard_normal(k))
        out.append((U * c) @ V.T + noise * rng.standard_normal((n, m)) / np.sqrt(n))
    return out


def compression_fidelity(stream, rank: int, gamma: float = 0.9, power_iters: int = 3, seed: int = 0) -> float:
    """Cosine between the compressed-cycle EMA and the dense EMA after the whole stream."""
    cfg = EmaConfig(gamma=gamma, rank=rank, power_iters=power_iters, seed=seed)
    store = LanguageGradientStore.empty("stream", [stream[0].shape], cfg)
    for g in stream:
        store = ema_update(store, [g], cfg)
    return cosine_flat(snapshot(store), dense_ema(stream, gamma))
