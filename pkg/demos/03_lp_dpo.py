# coding: utf-8

# # LP-DPO on a toy sequence policy
#
# The policy is a per-prompt first-token table plus a shared bigram table. The
# loss is `-log sigmoid(beta * p_m + alpha * l_m)` where `p_m` is the usual DPO
# margin against a frozen reference and `l_m` the length difference in tokens.

import math

import numpy as np

from congrad.preference import (DpoConfig, PreferencePair, ToyPolicy, dpo_loss, log_prob, lp_dpo_loss,
                                sample_gradient, sgd_step)

policy = ToyPolicy.random(num_prompts=2, vocab_size=6, max_len=6, seed=0)
pair = PreferencePair("en", 0, chosen=(1, 2, 3, 0), rejected=(4, 0), chosen_score=5, rejected_score=2)
print("log p(chosen)", log_prob(policy, 0, pair.chosen), "log p(rejected)", log_prob(policy, 0, pair.rejected))

# At the reference the DPO margin is zero, so only the length term remains.

cfg = DpoConfig(beta=0.1, alpha=0.01)
print("dpo", dpo_loss(policy, policy, pair, cfg), "= log 2", math.log(2))
print("lp-dpo", lp_dpo_loss(policy, policy, pair, cfg), "= -log sigmoid(0.02)", math.log1p(math.exp(-0.02)))

# ## Analytic gradient versus finite differences

g = sample_gradient(policy, policy, pair, cfg)
h = 1e-5
flat = policy.flat()
n_first = policy.first_logits.size
worst = 0.0
for i in np.flatnonzero(g)[:20]:
    up, dn = flat.copy(), flat.copy()
    up[i] += h
    dn[i] -= h
    pol = lambda v: policy.with_params([v[:n_first].reshape(2, 6), v[n_first:].reshape(6, 6)])
    fd = (lp_dpo_loss(pol(up), policy, pair, cfg) - lp_dpo_loss(pol(dn), policy, pair, cfg)) / (2 * h)
    worst = max(worst, abs(fd - g[i]) / abs(g[i]))
print("worst relative error on 20 coordinates", worst)

# A few gradient steps raise the chosen response's probability relative to the rejected one.

p = policy
for _ in range(20):
    p = sgd_step(p, sample_gradient(p, policy, pair, cfg), lr=1.0)
print("loss after 20 steps", lp_dpo_loss(p, policy, pair, cfg))
