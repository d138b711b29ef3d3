"""Experiment configuration documents (JSON) with strict key checking."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..errors import ConfigError
from ..forecaster import VARIANTS, ForecasterConfig
from ..memory import MemoryConfig
from ..protocol import EvalProtocol
from ..synthdata import CorpusSpec, composed_grammar, cycle_grammar, read_grammar
from .runners import ABLATION_CELL, CORRUPTION_LEVELS
from .training import TrainConfig

SECTIONS = ("model", "train", "protocol", "data", "experiment")


def _strict(cls, d, section: str):
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{section}: {exc}") from None


@dataclass
class ModelSection:
    """ForecasterConfig keys; class count and feature width default to the data's."""

    num_classes: int | None = None
    feature_dim: int | None = None
    hidden_visual: int = 300
    hidden_label: int = 30
    mem_visual: dict = field(default_factory=lambda: {"slots": 24, "slot_dim": 300})
    mem_label: dict = field(default_factory=lambda: {"slots": 20, "slot_dim": 30})
    decoder_hidden: int = 300
    persist_memory: bool = False
    future_visual_input: str = "zeros"

    def resolve(self, num_classes: int, feature_dim: int) -> ForecasterConfig:
        d = asdict(self)
        d["num_classes"] = self.num_classes or num_classes
        d["feature_dim"] = self.feature_dim or feature_dim
        for key in ("mem_visual", "mem_label"):
            sub = d[key]
            if not isinstance(sub, dict) or set(sub) != {"slots", "slot_dim"}:
                raise ConfigError(f"model.{key} needs exactly the keys slots, slot_dim")
            d[key] = MemoryConfig(**sub)
        if d["num_classes"] != num_classes or d["feature_dim"] != feature_dim:
            raise ConfigError(
                f"model expects {d['num_classes']} classes / {d['feature_dim']} features, "
                f"data has {num_classes} / {feature_dim}")
        return ForecasterConfig(**d)


@dataclass
class DataSection:
    """Corpus generation: ``grammar`` is ``composed``, ``cycle`` or a grammar file path."""

    grammar: str = "composed"
    num_classes: int = 8
    duration: int = 4
    grammar_seed: int = 0
    length: int = 120
    num_train: int = 200
    num_test: int = 50
    feature_dim: int = 16
    noise_std: float = 1.0

    def make_grammar(self):
        if self.grammar == "composed":
            return composed_grammar(self.num_classes, seed=self.grammar_seed)
        if self.grammar == "cycle":
            return cycle_grammar(self.num_classes, self.duration)
        path = Path(self.grammar)
        if not path.exists():
            raise ConfigError(f"data.grammar {self.grammar!r} is neither a builtin nor a file")
        return read_grammar(path)

    def corpus_spec(self) -> CorpusSpec:
        return CorpusSpec(self.length, self.num_train, self.num_test, self.feature_dim, self.noise_std)


@dataclass
class ExperimentSection:
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    variants: list[str] = field(default_factory=lambda: list(VARIANTS))
    cell: list[float] = field(default_factory=lambda: list(ABLATION_CELL))
    corruption_levels: list[float] = field(default_factory=lambda: list(CORRUPTION_LEVELS))
    jobs: int = 1

    def __post_init__(self):
        bad = set(self.variants) - set(VARIANTS)
        if bad:
            raise ConfigError(f"unknown variants {sorted(bad)}")
        if len(self.cell) != 2:
            raise ConfigError("experiment.cell must be [observed, predicted]")
        if not self.seeds:
            raise ConfigError("experiment.seeds must not be empty")


@dataclass
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    protocol: EvalProtocol = field(default_factory=EvalProtocol)
    data: DataSection = field(default_factory=DataSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a mapping")
        unknown = set(doc) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        return cls(
            _strict(ModelSection, doc.get("model", {}), "model"),
            _strict(TrainConfig, doc.get("train", {}), "train"),
            _strict(EvalProtocol, doc.get("protocol", {}), "protocol"),
            _strict(DataSection, doc.get("data", {}), "data"),
            _strict(ExperimentSection, doc.get("experiment", {}), "experiment"),
        )

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return ExperimentConfig.from_dict(doc)
