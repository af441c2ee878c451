"""Experiment configuration: one TOML document pins every artifact.

Given the file alone (all seeds included), dataset bytes, checkpoints,
adapter artifacts, and reports are reproducible byte-for-byte.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .synthlang import LanguageSpec, gen_corpus, make_language
from .transducer import ModelConfig

__all__ = [
    "SuiteConfig",
    "ModelOptions",
    "TrainOptions",
    "FilterOptions",
    "TrafficScenario",
    "ExperimentConfig",
    "ConfigError",
    "default_preset_path",
]


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass(frozen=True)
class SuiteConfig:
    languages: tuple[str, ...]
    feature_dim: int
    vocab_size: int
    suite_seed: int
    noise_sigma: float
    frames_per_token_min: int
    frames_per_token_max: int
    tokens_min: int
    tokens_max: int
    train_per_language: int
    test_per_language: int

    def __post_init__(self):
        if len(self.languages) != len(set(self.languages)):
            raise ConfigError("duplicate language ids in suite")
        if len(self.languages) < 1:
            raise ConfigError("suite needs at least one language")


@dataclass(frozen=True)
class ModelOptions:
    hidden_dim: int
    embed_dim: int
    chunk_size: int
    max_symbols_per_frame: int


@dataclass(frozen=True)
class TrainOptions:
    peak_lr: float
    warmup_steps: int
    epochs: int
    batch_size: int
    seed: int = 1


@dataclass(frozen=True)
class FilterOptions:
    """Utterance length filters; all off by default."""

    max_frames: int | None = None
    min_tokens: int | None = None
    max_tokens: int | None = None


@dataclass(frozen=True)
class TrafficScenario:
    name: str
    dominant: str
    share: float


@dataclass(frozen=True)
class ExperimentConfig:
    suite: SuiteConfig
    model: ModelOptions
    base_training: TrainOptions
    lin_training: TrainOptions
    lin_languages: tuple[str, ...]
    traffic: tuple[TrafficScenario, ...]
    filters: FilterOptions = field(default_factory=FilterOptions)

    def __post_init__(self):
        for lang in self.lin_languages:
            if lang not in self.suite.languages:
                raise ConfigError(f"adapter language '{lang}' not in suite")
        for scenario in self.traffic:
            if scenario.dominant not in self.suite.languages:
                raise ConfigError(f"traffic language '{scenario.dominant}' not in suite")
            if not (0.0 <= scenario.share <= 1.0):
                raise ConfigError(f"traffic share {scenario.share} out of [0, 1]")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            feature_dim=self.suite.feature_dim,
            hidden_dim=self.model.hidden_dim,
            vocab_size=self.suite.vocab_size,
            embed_dim=self.model.embed_dim,
            chunk_size=self.model.chunk_size,
            max_symbols_per_frame=self.model.max_symbols_per_frame,
        )

    def language_specs(self) -> list[LanguageSpec]:
        return [
            make_language(
                lang,
                self.suite.suite_seed,
                self.suite.feature_dim,
                self.suite.noise_sigma,
                self.suite.frames_per_token_min,
                self.suite.frames_per_token_max,
            )
            for lang in self.suite.languages
        ]

    def generate_data(self, out_dir=None):
        """Build (train, test) splits; optionally write them to out_dir."""
        return gen_corpus(
            self.language_specs(),
            {lang: self.suite.train_per_language for lang in self.suite.languages},
            {lang: self.suite.test_per_language for lang in self.suite.languages},
            self.suite.tokens_min,
            self.suite.tokens_max,
            self.suite.vocab_size,
            self.suite.suite_seed,
            out_dir=out_dir,
        )

    def traffic_distributions(self):
        from .evaluation import make_traffic

        return [
            make_traffic(s.dominant, s.share, self.suite.languages, name=s.name)
            for s in self.traffic
        ]

    def describe(self) -> str:
        lines = [
            f"suite: {len(self.suite.languages)} languages {list(self.suite.languages)}",
            f"  feature_dim={self.suite.feature_dim} vocab_size={self.suite.vocab_size} "
            f"suite_seed={self.suite.suite_seed} noise_sigma={self.suite.noise_sigma}",
            f"  frames/token={self.suite.frames_per_token_min}..{self.suite.frames_per_token_max} "
            f"tokens/utt={self.suite.tokens_min}..{self.suite.tokens_max} "
            f"train/test per language={self.suite.train_per_language}/{self.suite.test_per_language}",
            f"model: hidden={self.model.hidden_dim} embed={self.model.embed_dim} "
            f"chunk={self.model.chunk_size} max_symbols_per_frame={self.model.max_symbols_per_frame}",
            f"base_training: {self.base_training}",
            f"lin_training: {self.lin_training} languages={list(self.lin_languages)}",
            f"traffic: {[s.name for s in self.traffic]}",
        ]
        return "\n".join(lines)

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(doc, source=str(path))

    @classmethod
    def from_dict(cls, doc: dict, source: str = "<dict>") -> "ExperimentConfig":
        try:
            suite = doc["suite"]
            model = doc["model"]
            base = doc["base_training"]
            lin = doc["lin_training"]
            config = cls(
                suite=SuiteConfig(
                    languages=tuple(suite["languages"]),
                    feature_dim=int(suite["feature_dim"]),
                    vocab_size=int(suite["vocab_size"]),
                    suite_seed=int(suite["suite_seed"]),
                    noise_sigma=float(suite["noise_sigma"]),
                    frames_per_token_min=int(suite["frames_per_token_min"]),
                    frames_per_token_max=int(suite["frames_per_token_max"]),
                    tokens_min=int(suite["tokens_min"]),
                    tokens_max=int(suite["tokens_max"]),
                    train_per_language=int(suite["train_per_language"]),
                    test_per_language=int(suite["test_per_language"]),
                ),
                model=ModelOptions(
                    hidden_dim=int(model["hidden_dim"]),
                    embed_dim=int(model["embed_dim"]),
                    chunk_size=int(model["chunk_size"]),
                    max_symbols_per_frame=int(model["max_symbols_per_frame"]),
                ),
                base_training=_train_options(base),
                lin_training=_train_options(lin),
                lin_languages=tuple(lin.get("languages", [])),
                traffic=tuple(
                    TrafficScenario(
                        name=str(t["name"]), dominant=str(t["dominant"]), share=float(t["share"])
                    )
                    for t in doc.get("traffic", [])
                ),
                filters=FilterOptions(
                    max_frames=_opt_int(doc.get("filters", {}), "max_frames"),
                    min_tokens=_opt_int(doc.get("filters", {}), "min_tokens"),
                    max_tokens=_opt_int(doc.get("filters", {}), "max_tokens"),
                ),
            )
        except KeyError as exc:
            raise ConfigError(f"{source}: missing config key {exc}") from exc
        return config

    @classmethod
    def default(cls) -> "ExperimentConfig":
        return cls.from_toml(default_preset_path())


def _train_options(section: dict) -> TrainOptions:
    return TrainOptions(
        peak_lr=float(section["peak_lr"]),
        warmup_steps=int(section["warmup_steps"]),
        epochs=int(section["epochs"]),
        batch_size=int(section["batch_size"]),
        seed=int(section.get("seed", 1)),
    )


def _opt_int(section: dict, key: str) -> int | None:
    return int(section[key]) if key in section else None


def default_preset_path() -> Path:
    return Path(__file__).resolve().parent / "presets" / "default.toml"


def resolve_config(path_or_name: str) -> ExperimentConfig:
    """CLI helper: 'default' names the packaged preset, anything else is a path."""
    if path_or_name == "default":
        return ExperimentConfig.default()
    return ExperimentConfig.from_toml(path_or_name)
