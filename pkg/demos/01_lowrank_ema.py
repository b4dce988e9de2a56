# coding: utf-8

# # Compressed gradient EMA
#
# Every language keeps an exponential moving average of its gradients. Storing
# one dense matrix per language and parameter gets expensive, so each EMA is held
# as two thin factors `P Q^T` and refreshed with a decompress-update-recompress
# cycle. This walk-through checks how much of the dense EMA survives.

import numpy as np

from congrad.grad_store import EmaConfig, LanguageGradientStore, dense_ema, ema_update, snapshot
from congrad.lowrank import cosine_flat, power_iterate, reconstruct
from congrad.synthetic import compression_fidelity, gradient_stream

# ## Power iteration on a matrix of known rank
#
# A rank-3 matrix is recovered exactly at rank 3.

rng = np.random.default_rng(0)
M = rng.standard_normal((40, 3)) @ rng.standard_normal((3, 30))
F = power_iterate(M, rank=3, iters=3, seed=0)
print("factor shapes", F.P.shape, F.Q.shape)
print("relative error", np.linalg.norm(reconstruct(F) - M) / np.linalg.norm(M))

# ## One EMA step
#
# Starting from zero with gamma = 0.9, one update leaves 0.1 of the gradient.

cfg = EmaConfig(gamma=0.9, rank=3)
store = LanguageGradientStore.empty("en", [M.shape], cfg)
store = ema_update(store, [M], cfg)
print("step", store.step, "max |snapshot - 0.1 M|", np.abs(snapshot(store) - 0.1 * M.ravel()).max())

# ## Fidelity against the dense EMA
#
# Synthetic 256x256 streams with a power-law spectrum, 20 steps each. The
# stored floats drop from 65536 to 2*256*r.

stream = gradient_stream(256, 256, 20, seed=1)
for r in (4, 8, 16, 32, 64):
    print(f"rank {r:>2}: cosine {compression_fidelity(stream, r, seed=1):.4f}  floats {2 * 256 * r}")

# With a full-rank budget the cycle is lossless up to rounding:

small = [rng.standard_normal((16, 16)) for _ in range(10)]
cfg = EmaConfig(rank=16)
store = LanguageGradientStore.empty("en", [(16, 16)], cfg)
for g in small:
    store = ema_update(store, [g], cfg)
print("full rank cosine", cosine_flat(snapshot(store), dense_ema(small, 0.9)))
