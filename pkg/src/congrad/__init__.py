"""Consensus-gradient data filtering for self-rewarding multilingual preference alignment."""
from .config import ExperimentConfig
from .consensus import ConflictRecord, ConsensusGradient, consensus, deconflict_one
from .errors import (CongradError, ConfigError, EmptyDataError, EmptyStoreError, InvalidInputError,
                     InvalidRankError, NonFiniteGradientError, ReportParseError)
from .filtering import FilterConfig, FilterScore, congrad_score, quota, score_pairs, select
from .grad_store import DenseTracker, EmaConfig, LanguageGradientStore, dense_ema, ema_update, snapshot
from .lowrank import LowRankFactors, cosine_flat, power_iterate, reconstruct
from .preference import (DpoConfig, PreferencePair, ToyPolicy, dpo_loss, joint_loss, lp_dpo_loss,
                         minibatch_gradient, sample_gradient)
from .selfloop import RoundState, build_scenario, run_experiment, run_round

__version__ = "0.1.0"
__all__ = [n for n in dir() if not n.startswith("_")]
