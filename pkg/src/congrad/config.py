"""Experiment configuration: one JSON document with annotated defaults.

Defaults and where they come from ("reported" marks the published
experimental setting of the method; the rest are choices made here):

==========================  ==========  ====================================
field                       default     source
==========================  ==========  ====================================
k (candidates per prompt)   4           reported (4 responses/prompt)
filter.retain_fraction      0.5         reported (top 50%/language)
ema.rank                    64          reported (rank 64)
ema.power_iters             3           reported (3 iterations)
batch_size                  16          reported (batch size 16)
dpo.alpha                   0.01        reported grid {.02,.01,.005}
prompts_per_language        100         reported (100/language)
languages                   10 codes    reported language set
rounds                      5           reported (five rounds)
ema.gamma                   0.9         artifact choice (not reported)
dpo.beta                    1.0         artifact choice (toy-scale)
lr                          0.1         artifact choice (toy-scale)
heldout_per_language        150         artifact choice (evaluation set)
prior_strength              4.0         artifact choice (seed-policy skill)
judge_noise_std             1.0         artifact choice (judge noise)
everything else             see fields  artifact choice
==========================  ==========  ====================================
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError, InvalidInputError
from .filtering import FilterConfig
from .grad_store import EmaConfig
from .preference import DpoConfig

DEFAULT_LANGUAGES = ("en", "it", "zh", "pt", "ko", "es", "de", "ar", "ja", "fr")


@dataclass(frozen=True)
class ExperimentConfig:
    languages: tuple[str, ...] = DEFAULT_LANGUAGES
    prompts_per_language: int = 100
    heldout_per_language: int = 150
    rounds: int = 5
    k: int = 4
    vocab_size: int = 16
    max_len: int = 8
    region_width: int = 7
    region_overlap: float = 0.5
    prior_strength: float = 4.0
    init_noise: float = 0.5
    judge_noise_std: float = 1.0
    ema: EmaConfig = field(default_factory=EmaConfig)
    dpo: DpoConfig = field(default_factory=lambda: DpoConfig(beta=1.0, alpha=0.01))
    filter: FilterConfig = field(default_factory=FilterConfig)
    lr: float = 0.1
    batch_size: int = 16
    seed: int = 0
    output_dir: str = "runs"

    def __post_init__(self):
        langs = tuple(str(l) for l in self.languages)
        object.__setattr__(self, "languages", langs)
        if not langs:
            raise ConfigError("languages", "must be non-empty")
        if len(set(langs)) != len(langs):
            raise ConfigError("languages", "contains duplicates")
        for name in ("prompts_per_language", "rounds", "batch_size", "vocab_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, f"must be >= 1, got {getattr(self, name)}")
        if self.heldout_per_language < 0:
            raise ConfigError("heldout_per_language", "must be >= 0")
        if self.k < 2:
            raise ConfigError("k", f"must be >= 2, got {self.k}")
        if self.vocab_size < 3:
            raise ConfigError("vocab_size", "must be >= 3")
        if self.max_len < 2:
            raise ConfigError("max_len", "must be >= 2")
        if not 2 <= self.region_width <= min(self.vocab_size - 1, self.max_len - 1):
            raise ConfigError("region_width",
                              f"must lie in [2, {min(self.vocab_size - 1, self.max_len - 1)}] "
                              "(a full walk plus the stop token must fit in max_len)")
        if not 0.0 <= self.region_overlap < 1.0:
            raise ConfigError("region_overlap", "must lie in [0, 1)")
        if not self.lr > 0:
            raise ConfigError("lr", f"must be positive, got {self.lr}")
        if self.judge_noise_std < 0 or self.init_noise < 0:
            raise ConfigError("judge_noise_std", "noise levels must be non-negative")
        for name, cls in (("ema", EmaConfig), ("dpo", DpoConfig), ("filter", FilterConfig)):
            if not isinstance(getattr(self, name), cls):
                raise ConfigError(name, f"expected {cls.__name__}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["languages"] = list(self.languages)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration field")
        kwargs = dict(d)
        for name, sub in (("ema", EmaConfig), ("dpo", DpoConfig), ("filter", FilterConfig)):
            if name in kwargs:
                value = kwargs[name]
                if not isinstance(value, dict):
                    raise ConfigError(name, "must be an object")
                sub_known = {f.name for f in fields(sub)}
                bad = sorted(set(value) - sub_known)
                if bad:
                    raise ConfigError(f"{name}.{bad[0]}", "unknown configuration field")
                try:
                    kwargs[name] = sub(**value)
                except InvalidInputError as exc:
                    raise ConfigError(name, str(exc)) from None
        if "languages" in kwargs:
            kwargs["languages"] = tuple(kwargs["languages"])
        try:
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError("config", str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be an object")
        return cls.from_dict(data)

    def save(self, path):
        Path(path).write_text(self.to_json())

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    @property
    def num_prompts(self) -> int:
        return len(self.languages) * (self.prompts_per_language + self.heldout_per_language)
