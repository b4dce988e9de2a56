# coding: utf-8

# # Selecting training pairs per language
#
# Each candidate pair gets a score; within every language the best
# `ceil(rho * N)` are kept. The ConGrad score is the cosine between the pair's
# own LP-DPO gradient and the consensus gradient from the previous round.

import numpy as np

from congrad.consensus import consensus
from congrad.filtering import FilterConfig, FilterScore, quota, score_pairs, select
from congrad.preference import DpoConfig, PreferencePair, ToyPolicy, iter_sample_gradients

scores = [FilterScore(i, "en", s) for i, s in enumerate([0.9, 0.1, -0.2, 0.5])]
print("max, rho=0.5:", select(scores, FilterConfig(0.5, "max")))
print("min, rho=0.5:", select(scores, FilterConfig(0.5, "min")))
print("quotas for N=7:", {rho: quota(7, rho) for rho in (0.25, 0.5, 0.75, 1.0)})

# ## Scoring real pairs against a consensus

policy = ToyPolicy.random(8, 6, 5, seed=1)
rng = np.random.default_rng(1)
pairs = {}
for lang, ids in (("en", range(0, 4)), ("de", range(4, 8))):
    pairs[lang] = [PreferencePair(lang, i, tuple(rng.integers(1, 6, 3)), (0,), 4, 1) for i in ids]
cfg = DpoConfig(beta=1.0)
grads = {l: np.mean(list(iter_sample_gradients(policy, policy, ps, cfg)), axis=0) for l, ps in pairs.items()}
cons = consensus(grads)
fcfg = FilterConfig(0.5)
scored = score_pairs(pairs, fcfg, lambda l, ps: iter_sample_gradients(policy, policy, ps, cfg), cons)
for s in scored:
    print(f"{s.language} sample {s.sample_id}: {s.score:+.3f}")
print("retained", select(scored, fcfg))

# Baseline arms use the same selection rule with other scores.

for kind in ("reward_margin", "length_margin", "random"):
    print(kind, select(score_pairs(pairs, FilterConfig(0.5, kind=kind, seed=3)), FilterConfig(0.5, kind=kind)))
