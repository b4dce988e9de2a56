"""Independent reference implementations used as test oracles.

Written in plain Python loops / direct formulas, deliberately sharing no code
with the library beyond the data containers.
"""
import math

import numpy as np

from congrad.preference import PreferencePair, ToyPolicy


def brute_log_prob(policy: ToyPolicy, prompt_id: int, seq) -> float:
    def log_softmax_at(row, j):
        m = max(row)
        return row[j] - m - math.log(sum(math.exp(v - m) for v in row))
    total = log_softmax_at(list(policy.first_logits[prompt_id]), seq[0])
    for a, b in zip(seq[:-1], seq[1:]):
        total += log_softmax_at(list(policy.bigram_logits[a]), b)
    return total


def lp_dpo_formula(policy, ref, pair, beta, alpha) -> float:
    pm = ((brute_log_prob(policy, pair.prompt_id, pair.chosen) - brute_log_prob(ref, pair.prompt_id, pair.chosen))
          - (brute_log_prob(policy, pair.prompt_id, pair.rejected) - brute_log_prob(ref, pair.prompt_id, pair.rejected)))
    z = beta * pm + alpha * (len(pair.chosen) - len(pair.rejected))
    return -math.log(1.0 / (1.0 + math.exp(-z)))


def finite_difference_grad(loss_fn, policy: ToyPolicy, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn(policy)`` over every flat parameter."""
    flat = policy.flat()
    n_first = policy.first_logits.size
    out = np.zeros_like(flat)

    def at(vec):
        return ToyPolicy(policy.vocab_size, policy.max_len, vec[:n_first].reshape(policy.first_logits.shape),
                         vec[n_first:].reshape(policy.bigram_logits.shape))
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        out[i] = (loss_fn(at(up)) - loss_fn(at(down))) / (2 * h)
    return out


def pcgrad_two(g1, g2):
    """Straight-line two-task projection: each against the other's original gradient."""
    g1, g2 = np.asarray(g1, float), np.asarray(g2, float)
    d = float(g1 @ g2)
    p1 = g1 - d / float(g2 @ g2) * g2 if d < 0 else g1.copy()
    p2 = g2 - d / float(g1 @ g1) * g1 if d < 0 else g2.copy()
    return p1 + p2


def sort_select(items, rho, direction):
    """items: list of (language, sample_id, score). Full sort per language."""
    out = {}
    for lang in {l for l, _, _ in items}:
        rows = [(s, i) for l, i, s in items if l == lang]
        n = len(rows)
        k = max(1, math.ceil(round(rho * n, 9)))
        if direction == "max":
            rows.sort(key=lambda r: (-r[0], r[1]))
        else:
            rows.sort(key=lambda r: (r[0], r[1]))
        out[lang] = {i for _, i in rows[:min(k, n)]}
    return out


def random_pair(rng, num_prompts, V, max_len, language="xx"):
    pid = int(rng.integers(num_prompts))
    while True:
        a = tuple(int(t) for t in rng.integers(0, V, int(rng.integers(1, max_len + 1))))
        b = tuple(int(t) for t in rng.integers(0, V, int(rng.integers(1, max_len + 1))))
        if a != b:
            break
    hi, lo = sorted(rng.choice(6, 2, replace=False))[::-1]
    return PreferencePair(language, pid, a, b, int(hi), int(lo))
