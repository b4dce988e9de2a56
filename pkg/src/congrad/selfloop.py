"""The iterative self-rewarding loop with gradient-consensus filtering.

One round: sample ``k`` candidates per prompt from the current policy, judge
them, keep (best, worst) pairs with distinct scores, filter the pairs (from
round 2 on), run one epoch of LP-DPO descent against the round-start policy
while feeding per-language minibatch gradients into the compressed EMA
stores, and finally reduce the stores to the consensus gradient that filters
the next round.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .config import ExperimentConfig
from .consensus import ConsensusGradient, consensus
from .errors import EmptyDataError, InvalidInputError
from .filtering import FilterConfig, FilterScore, score_pairs, select
from .grad_store import EmaConfig, LanguageGradientStore, ema_update, snapshot
from .lowrank import flatten_concat
from .preference import (DpoConfig, PreferencePair, ToyPolicy, iter_sample_gradients, log_prob,
                         mean_loss, minibatch_gradient, sgd_step)
from .seeding import derive_rng, derive_seed
from .tasks import (JudgeModel, LanguageTask, candidate_seed, generate_candidates, make_tasks,
                    seed_policy)

log = logging.getLogger(__name__)


def build_pairs(candidates: Sequence[Sequence[int]], scores: Sequence[int], *, language: str = "",
                prompt_id: int = 0) -> PreferencePair | None:
    """Pair the highest- and lowest-scoring candidates; ``None`` on a score tie.

    Ties for the max or min go to the lowest index.
    """
    if len(candidates) != len(scores) or len(candidates) < 2:
        raise InvalidInputError("need at least two candidates with one score each")
    hi = int(np.argmax(scores))
    lo = int(np.argmin(scores))
    if scores[hi] == scores[lo]:
        return None
    chosen, rejected = tuple(candidates[hi]), tuple(candidates[lo])
    if chosen == rejected:
        return None
    return PreferencePair(language, prompt_id, chosen, rejected, int(scores[hi]), int(scores[lo]))


@dataclass(frozen=True)
class Scenario:
    """Everything about an experiment that is fixed before round 1."""

    tasks: tuple[LanguageTask, ...]
    judge: JudgeModel
    initial_policy: ToyPolicy
    heldout: Mapping[str, tuple[PreferencePair, ...]]

    @property
    def languages(self) -> list[str]:
        return [t.name for t in self.tasks]


def heldout_pairs(tasks: Sequence[LanguageTask], policy: ToyPolicy, targets_judge: JudgeModel, k: int,
                  seed: int) -> dict[str, tuple[PreferencePair, ...]]:
    """Evaluation pairs from the initial policy on held-out prompts, judged without noise."""
    clean = JudgeModel(targets_judge.targets, 0.0, targets_judge.seed)
    out = {}
    for t in tasks:
        pairs = []
        for pid in t.heldout_prompts:
            cands = generate_candidates(policy, pid, k, derive_seed(seed, "heldout", t.name, pid))
            pair = build_pairs(cands, [clean.score(pid, c) for c in cands], language=t.name, prompt_id=pid)
            if pair is not None:
                pairs.append(pair)
        out[t.name] = tuple(pairs)
    return out


def build_scenario(cfg: ExperimentConfig) -> Scenario:
    tasks = make_tasks(cfg.languages, cfg.prompts_per_language, cfg.heldout_per_language, cfg.vocab_size,
                       cfg.max_len, cfg.region_width, cfg.region_overlap, derive_seed(cfg.seed, "data"))
    targets = {pid: tgt for t in tasks for pid, tgt in t.targets.items()}
    judge = JudgeModel(targets, cfg.judge_noise_std, derive_seed(cfg.seed, "judge"))
    policy = seed_policy(tasks, cfg.vocab_size, cfg.max_len, cfg.prior_strength, cfg.init_noise,
                         derive_seed(cfg.seed, "policy"))
    heldout = heldout_pairs(tasks, policy, judge, cfg.k, derive_seed(cfg.seed, "heldout"))
    return Scenario(tuple(tasks), judge, policy, heldout)


@dataclass(frozen=True)
class RoundConfig:
    ema: EmaConfig
    dpo: DpoConfig
    filter: FilterConfig
    lr: float
    batch_size: int
    k: int = 4
    seed: int = 0

    @classmethod
    def from_experiment(cls, cfg: ExperimentConfig) -> "RoundConfig":
        return cls(cfg.ema, cfg.dpo, cfg.filter, cfg.lr, cfg.batch_size, cfg.k, cfg.seed)


@dataclass(frozen=True)
class LanguageRoundStats:
    language: str
    pairs: int
    retained: int
    trained: int
    heldout_accuracy: float
    heldout_loss: float
    conflicts: int
    mean_congrad_score: float | None
    store_step: int


@dataclass(frozen=True)
class RoundRecord:
    round: int
    filtered: bool
    pairs: Mapping[str, tuple[PreferencePair, ...]]
    scores: tuple[FilterScore, ...]
    retained: Mapping[str, frozenset]
    stats: tuple[LanguageRoundStats, ...]
    consensus_source_round: int | None
    consensus_source_steps: Mapping[str, int] | None
    store_steps: Mapping[str, int]
    conflict_records: tuple
    joint_heldout_loss: float
    train_loss: float

    @property
    def trained_count(self) -> int:
        return sum(s.trained for s in self.stats)


@dataclass(frozen=True)
class RoundState:
    round: int
    policy: ToyPolicy
    ref_policy: ToyPolicy
    datasets: Mapping[str, tuple[PreferencePair, ...]] = field(default_factory=dict)
    consensus_prev: ConsensusGradient | None = None
    consensus_steps: Mapping[str, int] | None = None
    stores: Mapping[str, LanguageGradientStore] = field(default_factory=dict)
    rng_seed: int = 0
    last_record: RoundRecord | None = None

    def __post_init__(self):
        if self.round < 1:
            raise InvalidInputError("round must be >= 1")
        if (self.consensus_prev is not None) != (self.round >= 2):
            raise InvalidInputError("consensus_prev must be present exactly when round >= 2")

    @classmethod
    def initial(cls, policy: ToyPolicy, seed: int = 0) -> "RoundState":
        return cls(round=1, policy=policy, ref_policy=policy, rng_seed=seed)


def collect_pairs(state: RoundState, scenario: Scenario, k: int) -> dict[str, tuple[PreferencePair, ...]]:
    """Self-rewarding data for this round: sample, judge, pair, drop ties."""
    out = {}
    for task in scenario.tasks:
        pairs = []
        for pid in task.train_prompts:
            cands = generate_candidates(state.policy, pid, k,
                                        candidate_seed(state.rng_seed, state.round, task.name, pid))
            scores = [scenario.judge.score(pid, c, state.round) for c in cands]
            pair = build_pairs(cands, scores, language=task.name, prompt_id=pid)
            if pair is not None:
                pairs.append(pair)
        out[task.name] = tuple(pairs)
    return out


def heldout_metrics(policy: ToyPolicy, scenario: Scenario, dpo: DpoConfig, language: str) -> tuple[float, float]:
    """(preference accuracy, mean LP-DPO loss against the initial policy) on held-out pairs."""
    pairs = scenario.heldout.get(language, ())
    if not pairs:
        return float("nan"), float("nan")
    wins = sum(log_prob(policy, p.prompt_id, p.chosen) > log_prob(policy, p.prompt_id, p.rejected) for p in pairs)
    return wins / len(pairs), mean_loss(policy, scenario.initial_policy, pairs, dpo)


def joint_heldout_loss(policy: ToyPolicy, scenario: Scenario, dpo: DpoConfig) -> float:
    losses = [heldout_metrics(policy, scenario, dpo, l)[1] for l in scenario.languages if scenario.heldout.get(l)]
    return float(np.mean(losses)) if losses else float("nan")


def run_round(state: RoundState, scenario: Scenario, cfg: RoundConfig) -> RoundState:
    t = state.round
    policy = state.policy
    ref = policy  # frozen round-start model
    datasets = collect_pairs(state, scenario, cfg.k)
    for lang, pairs in datasets.items():
        if not pairs:
            log.warning("round %d: every pair for language %r was discarded; skipping it", t, lang)
    active = {l: p for l, p in datasets.items() if p}
    if not active:
        raise EmptyDataError(f"round {t}: no preference pairs in any language")

    # filtering (bypassed in round 1)
    scores: list[FilterScore] = []
    if t == 1:
        retained = {l: frozenset(p.prompt_id for p in pairs) for l, pairs in active.items()}
    else:
        fcfg = replace(cfg.filter, seed=derive_seed(state.rng_seed, "round", t, "random-filter", cfg.filter.seed))
        scores = score_pairs(active, fcfg,
                             sample_grads=lambda lang, items: iter_sample_gradients(policy, ref, items, cfg.dpo),
                             consensus=state.consensus_prev)
        retained = {l: frozenset(ids) for l, ids in select(scores, fcfg).items()}

    # one epoch of LP-DPO; per-language minibatches interleaved in a seeded order
    train_rng = derive_rng(state.rng_seed, "round", t, "train")
    batches = []
    for lang in sorted(active):
        keep = [p for p in active[lang] if p.prompt_id in retained[lang]]
        order = train_rng.permutation(len(keep))
        keep = [keep[i] for i in order]
        batches.extend((lang, keep[i:i + cfg.batch_size]) for i in range(0, len(keep), cfg.batch_size))
    batches = [batches[i] for i in train_rng.permutation(len(batches))]

    ema_cfg = replace(cfg.ema, seed=derive_seed(state.rng_seed, "round", t, "ema", cfg.ema.seed))
    stores = {l: LanguageGradientStore.empty(l, policy.shapes, ema_cfg) for l in sorted(active)}
    losses = []
    for lang, batch in batches:
        loss, grads = minibatch_gradient(policy, ref, batch, cfg.dpo)
        losses.append(loss)
        stores[lang] = ema_update(stores[lang], grads, ema_cfg)
        policy = sgd_step(policy, flatten_concat(grads), cfg.lr)

    snaps = {l: snapshot(s) for l, s in stores.items() if s.step > 0}
    new_consensus = consensus(snaps, derive_seed(state.rng_seed, "round", t, "pcgrad-order"))
    store_steps = {l: s.step for l, s in stores.items()}

    stats = []
    for lang in scenario.languages:
        acc, hl = heldout_metrics(policy, scenario, cfg.dpo, lang)
        lang_scores = [s.score for s in scores if s.language == lang and s.kind == "congrad"]
        stats.append(LanguageRoundStats(
            language=lang,
            pairs=len(datasets.get(lang, ())),
            retained=len(retained.get(lang, ())),
            trained=len(retained.get(lang, ())),
            heldout_accuracy=acc,
            heldout_loss=hl,
            conflicts=new_consensus.conflicts_for(lang),
            mean_congrad_score=float(np.mean(lang_scores)) if lang_scores else None,
            store_step=store_steps.get(lang, 0),
        ))
    record = RoundRecord(
        round=t,
        filtered=t > 1,
        pairs=datasets,
        scores=tuple(scores),
        retained=retained,
        stats=tuple(stats),
        consensus_source_round=t - 1 if t > 1 else None,
        consensus_source_steps=dict(state.consensus_steps) if state.consensus_steps else None,
        store_steps=store_steps,
        conflict_records=new_consensus.records,
        joint_heldout_loss=joint_heldout_loss(policy, scenario, cfg.dpo),
        train_loss=float(np.mean(losses)),
    )
    log.info("round %d: trained on %d pairs, held-out joint loss %.6f", t, record.trained_count,
             record.joint_heldout_loss)
    return RoundState(round=t + 1, policy=policy, ref_policy=policy, datasets=datasets,
                      consensus_prev=new_consensus, consensus_steps=store_steps, stores=stores,
                      rng_seed=state.rng_seed, last_record=record)


def run_experiment(cfg: ExperimentConfig, scenario: Scenario | None = None, *,
                   start: RoundState | None = None,
                   on_round_end: Callable[[RoundState], None] | None = None) -> dict:
    """Run rounds up to ``cfg.rounds`` and return a JSON-ready report.

    ``start`` resumes from a saved state (its ``round`` is the next round to run).
    """
    scenario = scenario or build_scenario(cfg)
    rcfg = RoundConfig.from_experiment(cfg)
    state = start or RoundState.initial(scenario.initial_policy, cfg.seed)
    rounds = []
    while state.round <= cfg.rounds:
        state = run_round(state, scenario, rcfg)
        rounds.append(round_summary(state.last_record))
        if on_round_end is not None:
            on_round_end(state)
    return {"arm": cfg.filter.arm, "retain_fraction": cfg.filter.retain_fraction, "seed": cfg.seed,
            "rounds": rounds, "final_state": state}


def round_summary(rec: RoundRecord) -> dict:
    out = {
        "round": rec.round,
        "joint_heldout_loss": rec.joint_heldout_loss,
        "train_loss": rec.train_loss,
        "trained": rec.trained_count,
        "pairs": sum(len(p) for p in rec.pairs.values()),
        "conflicts": sum(1 for r in rec.conflict_records if r.projected),
        "store_steps": dict(rec.store_steps),
        "languages": [s.__dict__ for s in rec.stats],
    }
    if rec.filtered:
        vals = np.array([s.score for s in rec.scores])
        out["filter"] = {"kind": rec.scores[0].kind if rec.scores else None,
                         "consensus_source_round": rec.consensus_source_round,
                         "consensus_source_steps": rec.consensus_source_steps,
                         "score_mean": float(vals.mean()) if vals.size else None,
                         "score_min": float(vals.min()) if vals.size else None,
                         "score_max": float(vals.max()) if vals.size else None}
    return out
