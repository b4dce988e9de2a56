"""Synthetic multilingual preference tasks and the scripted judge.

Token 0 is a stop token; the content tokens ``1..V-1`` form a ring. Each
language owns a contiguous window ("region") of the ring and a walking
direction: its ideal responses start somewhere in the region, step token by
token towards the region's terminal end, and emit the stop token right after
the terminal token.  Ideal responses are therefore fully described by bigram
transitions, with lengths varying by starting position.
Neighbouring languages' regions overlap by a tunable fraction and walk in
opposite directions (away from each other), so on shared tokens they want
different successors.
That gives negative interference in the shared bigram parameters.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidInputError
from .preference import ToyPolicy
from .seeding import derive_rng, derive_seed

STOP = 0


@dataclass(frozen=True)
class LanguageTask:
    name: str
    region: tuple[int, ...]
    direction: int
    train_prompts: tuple[int, ...]
    heldout_prompts: tuple[int, ...]
    targets: Mapping[int, tuple[int, ...]]

    @property
    def terminal(self) -> int:
        return self.region[-1] if self.direction > 0 else self.region[0]

    def successor(self, token: int) -> int | None:
        """Ideal next token after ``token`` (the stop token after the terminal)."""
        if token not in self.region:
            return None
        if token == self.terminal:
            return STOP
        return self.region[self.region.index(token) + self.direction]

    def ideal_response(self, start: int) -> tuple[int, ...]:
        seq = [start]
        while seq[-1] != STOP:
            seq.append(self.successor(seq[-1]))
        return tuple(seq)

    def to_dict(self) -> dict:
        return {"name": self.name, "region": list(self.region), "direction": self.direction,
                "train_prompts": list(self.train_prompts), "heldout_prompts": list(self.heldout_prompts)}


def language_regions(n_languages: int, vocab_size: int, width: int, overlap: float) -> list[tuple[int, ...]]:
    """Token windows on the content ring; consecutive windows share ``~overlap * width`` tokens."""
    content = vocab_size - 1
    if content < 2:
        raise InvalidInputError("vocab_size must be at least 3")
    if not 2 <= width <= content:
        raise InvalidInputError(f"region width must lie in [2, {content}], got {width}")
    if not 0.0 <= overlap < 1.0:
        raise InvalidInputError(f"overlap must lie in [0, 1), got {overlap}")
    shift = max(1, int(math.floor(width * (1.0 - overlap) + 0.5)))
    return [tuple(1 + (i * shift + j) % content for j in range(width)) for i in range(n_languages)]


def make_tasks(languages: Sequence[str], prompts_per_language: int, heldout_per_language: int,
               vocab_size: int, max_len: int, region_width: int, overlap: float, seed: int) -> list[LanguageTask]:
    """Lay out prompt ids (all training prompts first, then held-out) and draw targets."""
    if region_width + 1 > max_len:
        raise InvalidInputError(f"region_width + 1 must not exceed max_len ({max_len})")
    regions = language_regions(len(languages), vocab_size, region_width, overlap)
    n_train = len(languages) * prompts_per_language
    tasks = []
    for li, (name, region) in enumerate(zip(languages, regions)):
        train = tuple(range(li * prompts_per_language, (li + 1) * prompts_per_language))
        start = n_train + li * heldout_per_language
        heldout = tuple(range(start, start + heldout_per_language))
        # neighbours walk away from each other: opposing successors on shared
        # tokens while each terminal stays outside the overlap
        direction = -1 if li % 2 == 0 else 1
        rng = derive_rng(seed, "targets", name)
        targets = {}
        task = LanguageTask(name, region, direction, train, heldout, targets)
        for pid in train + heldout:
            targets[pid] = task.ideal_response(region[int(rng.integers(len(region)))])
        tasks.append(task)
    return tasks


def seed_policy(tasks: Sequence[LanguageTask], vocab_size: int, max_len: int, prior_strength: float,
                noise: float, seed: int) -> ToyPolicy:
    """A weakly "instruction-tuned" starting policy.

    Logits are Gaussian noise plus ``prior_strength`` on each prompt's ideal
    first token and, in the bigram, on every language's ideal successor
    (shared rows split the prior among the languages that use them).
    """
    num_prompts = sum(len(t.train_prompts) + len(t.heldout_prompts) for t in tasks)
    rng = np.random.default_rng(seed)
    first = noise * rng.standard_normal((num_prompts, vocab_size))
    bigram = noise * rng.standard_normal((vocab_size, vocab_size))
    for t in tasks:
        for pid, target in t.targets.items():
            first[pid, target[0]] += prior_strength
    users = np.zeros(vocab_size)
    for t in tasks:
        users[list(t.region)] += 1
    for t in tasks:
        for tok in t.region:
            bigram[tok, t.successor(tok)] += prior_strength / users[tok]
    return ToyPolicy(vocab_size, max_len, first, bigram)


def similarity(response: Sequence[int], target: Sequence[int]) -> float:
    """Fraction of aligned positions that agree, normalised by the longer sequence."""
    if not response or not target:
        return 0.0
    hits = sum(1 for a, b in zip(response, target) if a == b)
    return hits / max(len(response), len(target))


@dataclass(frozen=True)
class JudgeModel:
    """Integer 0..5 scorer: ``clamp(round(5 * similarity) + noise, 0, 5)``.

    The noise in ``{-1, 0, 1}`` is a rounded, clipped Gaussian seeded by the
    prompt, the round and the response tokens, so identical responses always
    get identical scores.
    """

    targets: Mapping[int, tuple[int, ...]]
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_std < 0:
            raise InvalidInputError("noise_std must be non-negative")

    def score(self, prompt_id: int, response: Sequence[int], round_: int = 0) -> int:
        base = math.floor(5.0 * similarity(response, self.targets[prompt_id]) + 0.5)
        noise = 0
        if self.noise_std > 0:
            key = zlib.crc32(bytes(int(t) for t in response))
            draw = derive_rng(self.seed, "judge", round_, prompt_id, key).normal(0.0, self.noise_std)
            noise = int(min(1, max(-1, math.floor(draw + 0.5))))
        return int(min(5, max(0, base + noise)))


def generate_candidates(policy: ToyPolicy, prompt_id: int, k: int, seed: int) -> list[tuple[int, ...]]:
    """``k`` ancestral samples; a response ends after the stop token or at ``max_len``."""
    if k < 2:
        raise InvalidInputError(f"k must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    first_cdf = np.cumsum(policy.first_distribution(prompt_id))
    trans_cdf = np.cumsum(policy.transition_matrix(), axis=1)
    V = policy.vocab_size

    def draw(cdf):
        # clamp: the last cdf entry can sit a hair below 1.0
        return min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), V - 1)

    out = []
    for _ in range(k):
        seq = [draw(first_cdf)]
        while len(seq) < policy.max_len and seq[-1] != STOP:
            seq.append(draw(trans_cdf[seq[-1]]))
        out.append(tuple(seq))
    return out


def candidate_seed(master: int, round_: int, language: str, prompt_id: int) -> int:
    return derive_seed(master, "round", round_, "generate", language, prompt_id)
