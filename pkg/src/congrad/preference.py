"""Toy sequence policy and the DPO / length-penalised DPO objectives.

The policy has two registered parameter matrices, in this order:

* ``first_token``: ``(num_prompts, V)`` logits for the first response token,
  conditioned on the prompt id;
* ``bigram``: ``(V, V)`` logits for each next token given the previous one.

``log p(y | x) = log softmax(first[x])[y0] + sum_t log softmax(bigram[y_{t-1}])[y_t]``.
Everything is float64 and all gradients are analytic.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .errors import InvalidInputError
from .lowrank import flatten_concat, unflatten

log = logging.getLogger(__name__)

PARAM_NAMES = ("first_token", "bigram")


@dataclass(frozen=True)
class ToyPolicy:
    vocab_size: int
    max_len: int
    first_logits: np.ndarray
    bigram_logits: np.ndarray

    def __post_init__(self):
        first = np.array(self.first_logits, dtype=np.float64)
        bigram = np.array(self.bigram_logits, dtype=np.float64)
        V = self.vocab_size
        if V < 1 or self.max_len < 1:
            raise InvalidInputError("vocab_size and max_len must be positive")
        if first.ndim != 2 or first.shape[1] != V or first.shape[0] < 1:
            raise InvalidInputError(f"first_logits must be (num_prompts, {V}), got {first.shape}")
        if bigram.shape != (V, V):
            raise InvalidInputError(f"bigram_logits must be ({V}, {V}), got {bigram.shape}")
        if not (np.all(np.isfinite(first)) and np.all(np.isfinite(bigram))):
            raise InvalidInputError("policy parameters must be finite")
        first.flags.writeable = False
        bigram.flags.writeable = False
        object.__setattr__(self, "first_logits", first)
        object.__setattr__(self, "bigram_logits", bigram)

    @classmethod
    def zeros(cls, num_prompts: int, vocab_size: int, max_len: int) -> "ToyPolicy":
        return cls(vocab_size, max_len, np.zeros((num_prompts, vocab_size)), np.zeros((vocab_size, vocab_size)))

    @classmethod
    def random(cls, num_prompts: int, vocab_size: int, max_len: int, seed: int = 0,
               scale: float = 1.0) -> "ToyPolicy":
        rng = np.random.default_rng(seed)
        return cls(vocab_size, max_len,
                   scale * rng.standard_normal((num_prompts, vocab_size)),
                   scale * rng.standard_normal((vocab_size, vocab_size)))

    @property
    def num_prompts(self) -> int:
        return self.first_logits.shape[0]

    @property
    def params(self) -> list[np.ndarray]:
        return [self.first_logits, self.bigram_logits]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [p.shape for p in self.params]

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def flat(self) -> np.ndarray:
        return flatten_concat(self.params)

    def with_params(self, params: Sequence[np.ndarray]) -> "ToyPolicy":
        first, bigram = params
        return ToyPolicy(self.vocab_size, self.max_len, first, bigram)

    def first_distribution(self, prompt_id: int) -> np.ndarray:
        return softmax(self.first_logits[prompt_id])

    def transition_matrix(self) -> np.ndarray:
        return softmax(self.bigram_logits, axis=1)


@dataclass(frozen=True)
class PreferencePair:
    language: str
    prompt_id: int
    chosen: tuple[int, ...]
    rejected: tuple[int, ...]
    chosen_score: int
    rejected_score: int

    def __post_init__(self):
        object.__setattr__(self, "chosen", tuple(int(t) for t in self.chosen))
        object.__setattr__(self, "rejected", tuple(int(t) for t in self.rejected))
        if self.chosen == self.rejected:
            raise InvalidInputError("chosen and rejected responses are identical")
        if not self.chosen_score > self.rejected_score:
            raise InvalidInputError(
                f"chosen_score ({self.chosen_score}) must exceed rejected_score ({self.rejected_score})")
        if not self.chosen or not self.rejected:
            raise InvalidInputError("responses must contain at least one token")

    @property
    def length_margin(self) -> int:
        return len(self.chosen) - len(self.rejected)

    @property
    def reward_margin(self) -> int:
        return self.chosen_score - self.rejected_score

    def to_dict(self) -> dict:
        return {"language": self.language, "prompt_id": self.prompt_id,
                "chosen": list(self.chosen), "rejected": list(self.rejected),
                "chosen_score": self.chosen_score, "rejected_score": self.rejected_score}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PreferencePair":
        return cls(str(d["language"]), int(d["prompt_id"]), tuple(d["chosen"]), tuple(d["rejected"]),
                   int(d["chosen_score"]), int(d["rejected_score"]))


@dataclass(frozen=True)
class DpoConfig:
    beta: float = 0.1
    alpha: float = 0.01

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidInputError(f"beta must be positive, got {self.beta}")
        if not self.alpha >= 0:
            raise InvalidInputError(f"alpha must be non-negative, got {self.alpha}")


def _check_sequence(policy: ToyPolicy, prompt_id: int, seq) -> np.ndarray:
    seq = np.asarray(seq, dtype=np.int64)
    if seq.ndim != 1 or seq.size < 1:
        raise InvalidInputError("sequence must be a non-empty 1-D token list")
    if seq.min() < 0 or seq.max() >= policy.vocab_size:
        raise InvalidInputError(f"token out of vocabulary [0, {policy.vocab_size})")
    if not 0 <= prompt_id < policy.num_prompts:
        raise InvalidInputError(f"prompt_id {prompt_id} out of range [0, {policy.num_prompts})")
    return seq


def _log_prob(policy: ToyPolicy, prompt_id: int, seq: np.ndarray, bigram_lsm: np.ndarray) -> float:
    first = log_softmax(policy.first_logits[prompt_id])[seq[0]]
    return float(first + bigram_lsm[seq[:-1], seq[1:]].sum())


def log_prob(policy: ToyPolicy, prompt_id: int, sequence) -> float:
    """Log-probability of ``sequence`` as a response to prompt ``prompt_id``."""
    seq = _check_sequence(policy, prompt_id, sequence)
    return _log_prob(policy, prompt_id, seq, log_softmax(policy.bigram_logits, axis=1))


def _log_prob_grad(policy: ToyPolicy, prompt_id: int, seq: np.ndarray,
                   first_probs: np.ndarray, trans: np.ndarray):
    """Gradient of ``log p(seq)``: (first-token row gradient, bigram gradient)."""
    V = policy.vocab_size
    g_first = -first_probs.copy()
    g_first[seq[0]] += 1.0
    g_bigram = np.zeros((V, V))
    if seq.size > 1:
        prev, nxt = seq[:-1], seq[1:]
        np.add.at(g_bigram, (prev, nxt), 1.0)
        counts = np.bincount(prev, minlength=V).astype(np.float64)
        g_bigram -= counts[:, None] * trans
    return g_first, g_bigram


def neg_log_sigmoid(z):
    return np.logaddexp(0.0, -z)


def preference_margin(policy: ToyPolicy, ref: ToyPolicy, pair: PreferencePair) -> float:
    """``[log pi(y_w) - log ref(y_w)] - [log pi(y_l) - log ref(y_l)]``."""
    if policy.shapes != ref.shapes:
        raise InvalidInputError("policy and reference have different shapes")
    return ((log_prob(policy, pair.prompt_id, pair.chosen) - log_prob(ref, pair.prompt_id, pair.chosen))
            - (log_prob(policy, pair.prompt_id, pair.rejected) - log_prob(ref, pair.prompt_id, pair.rejected)))


def dpo_loss(policy: ToyPolicy, ref: ToyPolicy, pair: PreferencePair, cfg: DpoConfig) -> float:
    return float(neg_log_sigmoid(cfg.beta * preference_margin(policy, ref, pair)))


def lp_dpo_loss(policy: ToyPolicy, ref: ToyPolicy, pair: PreferencePair, cfg: DpoConfig) -> float:
    """``-log sigmoid(beta * p_m + alpha * l_m)`` with ``l_m = |y_w| - |y_l|`` in tokens."""
    z = cfg.beta * preference_margin(policy, ref, pair) + cfg.alpha * pair.length_margin
    return float(neg_log_sigmoid(z))


class _Evaluator:
    """Caches softmax tables of a (policy, ref) pair across many samples."""

    def __init__(self, policy: ToyPolicy, ref: ToyPolicy, cfg: DpoConfig):
        if policy.shapes != ref.shapes:
            raise InvalidInputError("policy and reference have different shapes")
        self.policy, self.ref, self.cfg = policy, ref, cfg
        self.lsm = log_softmax(policy.bigram_logits, axis=1)
        self.ref_lsm = log_softmax(ref.bigram_logits, axis=1)
        self.trans = np.exp(self.lsm)

    def loss_and_grad(self, pair: PreferencePair):
        """Returns ``(loss, prompt_id, first-row gradient, bigram gradient)``."""
        p, x = self.policy, pair.prompt_id
        yw = _check_sequence(p, x, pair.chosen)
        yl = _check_sequence(p, x, pair.rejected)
        margin = ((_log_prob(p, x, yw, self.lsm) - _log_prob(self.ref, x, yw, self.ref_lsm))
                  - (_log_prob(p, x, yl, self.lsm) - _log_prob(self.ref, x, yl, self.ref_lsm)))
        z = self.cfg.beta * margin + self.cfg.alpha * pair.length_margin
        loss = float(neg_log_sigmoid(z))
        # d/dz [-log sigmoid(z)] = -sigmoid(-z)
        coef = -float(expit(-z)) * self.cfg.beta
        probs = softmax(p.first_logits[x])
        fw, bw = _log_prob_grad(p, x, yw, probs, self.trans)
        fl, bl = _log_prob_grad(p, x, yl, probs, self.trans)
        return loss, x, coef * (fw - fl), coef * (bw - bl)


def sample_gradient(policy: ToyPolicy, ref: ToyPolicy, pair: PreferencePair, cfg: DpoConfig) -> np.ndarray:
    """Exact gradient of :func:`lp_dpo_loss` w.r.t. the policy, flattened."""
    _, x, g_row, g_bigram = _Evaluator(policy, ref, cfg).loss_and_grad(pair)
    g_first = np.zeros_like(policy.first_logits)
    g_first[x] = g_row
    return flatten_concat([g_first, g_bigram])


def iter_sample_gradients(policy: ToyPolicy, ref: ToyPolicy, pairs: Sequence[PreferencePair], cfg: DpoConfig):
    """Yield the flat per-sample gradient of each pair (one dense vector at a time)."""
    ev = _Evaluator(policy, ref, cfg)
    g_first = np.zeros_like(policy.first_logits)
    for pair in pairs:
        _, x, g_row, g_bigram = ev.loss_and_grad(pair)
        g_first[x] = g_row
        yield flatten_concat([g_first, g_bigram])
        g_first[x] = 0.0


def minibatch_gradient(policy: ToyPolicy, ref: ToyPolicy, pairs: Sequence[PreferencePair],
                       cfg: DpoConfig) -> tuple[float, list[np.ndarray]]:
    """Mean LP-DPO loss over ``pairs`` and its gradient per parameter matrix."""
    if not pairs:
        raise InvalidInputError("empty minibatch")
    ev = _Evaluator(policy, ref, cfg)
    g_first = np.zeros_like(policy.first_logits)
    g_bigram = np.zeros_like(policy.bigram_logits)
    total = 0.0
    for pair in pairs:
        loss, x, g_row, g_b = ev.loss_and_grad(pair)
        total += loss
        g_first[x] += g_row
        g_bigram += g_b
    n = len(pairs)
    return total / n, [g_first / n, g_bigram / n]


def mean_loss(policy: ToyPolicy, ref: ToyPolicy, pairs: Sequence[PreferencePair], cfg: DpoConfig) -> float:
    ev = _Evaluator(policy, ref, cfg)
    return float(np.mean([ev.loss_and_grad(p)[0] for p in pairs]))


def joint_loss(policy: ToyPolicy, ref: ToyPolicy, datasets: Mapping[str, Sequence[PreferencePair]],
               cfg: DpoConfig) -> float:
    """Average over languages of each language's mean LP-DPO loss."""
    per_lang = []
    for lang in sorted(datasets):
        pairs = datasets[lang]
        if not pairs:
            log.warning("language %r has no preference pairs; excluded from joint loss", lang)
            continue
        per_lang.append(mean_loss(policy, ref, pairs, cfg))
    if not per_lang:
        raise InvalidInputError("every language dataset is empty")
    return float(sum(per_lang) / len(per_lang))


def sgd_step(policy: ToyPolicy, grad, lr: float) -> ToyPolicy:
    """``params - lr * grad``, returning a new policy."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.ndim != 1 or grad.size != policy.num_params:
        raise InvalidInputError(f"gradient length {grad.size} != parameter count {policy.num_params}")
    if lr < 0:
        raise InvalidInputError(f"learning rate must be non-negative, got {lr}")
    updated = [p - lr * g for p, g in zip(policy.params, unflatten(grad, policy.shapes))]
    return policy.with_params(updated)
