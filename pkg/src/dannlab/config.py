"""Experiment configuration: a validated pydantic tree plus a parser for
the flat text format used by config files.

File format: one ``section.key=value`` per line, ``#`` starts a comment,
blank lines ignored, comma-separated values become lists. Example::

    kind=compare
    seed=17
    data.synthetic.rotation_angle=30
    train.epochs=100
    network.sweep_layers=1,2,3,4
"""

import os
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .data import SyntheticShiftSpec
from .errors import ConfigError
from .train import TrainConfig

KINDS = ("sweep", "compare", "visualize", "gen-data")


class SyntheticSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_source: int = 4000
    n_target: int = 4000
    latent_dim: int = 8
    feature_dim: int = 64
    rotation_angle: float = 30.0
    translation_norm: float = 2.0
    noise_std: float = 0.05
    seed: Optional[int] = None  # falls back to the experiment seed


class DataSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["synthetic", "csv"] = "synthetic"
    synthetic: SyntheticSection = Field(default_factory=SyntheticSection)
    source_path: Optional[str] = None
    target_path: Optional[str] = None
    target_pool_path: Optional[str] = None
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)

    @model_validator(mode="after")
    def _check_paths(self):
        if self.kind == "csv":
            for name in ("source_path", "target_path", "target_pool_path"):
                path = getattr(self, name)
                if not path:
                    raise ValueError(f"csv data requires {name}")
                if not os.path.exists(path):
                    raise ValueError(f"{name} does not exist: {path}")
        return self


class TrainSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 5e-4
    dropout_input: float = 0.2
    dropout_hidden: float = 0.5
    max_norm: float = 4.0
    clip_norm: float = 10.0
    lambda_warmup_epochs: int = 10
    lambda_final: float = 1.0
    trials: int = 20


class NetworkSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    hidden_width: int = 256
    shared_layers: int = 2
    sweep_layers: list[int] = Field(default_factory=lambda: [1, 2, 3, 4])

    @field_validator("sweep_layers")
    @classmethod
    def _check_sweep(cls, v):
        if not v or any(k not in (1, 2, 3, 4) for k in v):
            raise ValueError(f"sweep_layers must be a non-empty subset of 1..4, got {v}")
        return v

    @field_validator("shared_layers")
    @classmethod
    def _check_shared(cls, v):
        if v not in (1, 2, 3, 4):
            raise ValueError(f"shared_layers must be within 1..4, got {v}")
        return v


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Optional[Literal["sweep", "compare", "visualize", "gen-data"]] = None
    attribute: Literal["arousal", "valence", "dominance"] = "arousal"
    seed: int = 0
    out_dir: str = "out"
    data: DataSection = Field(default_factory=DataSection)
    train: TrainSection = Field(default_factory=TrainSection)
    network: NetworkSection = Field(default_factory=NetworkSection)

    @model_validator(mode="after")
    def _check_trials(self):
        # the comparison's significance test needs a variance per arm
        if self.kind == "compare" and self.train.trials < 2:
            raise ValueError(f"compare requires train.trials >= 2, got {self.train.trials}")
        return self


def parse_flat_text(text: str) -> dict:
    """Flat dotted key=value document to a nested dict of strings/lists."""
    root: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        node = root
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"line {lineno}: {key!r} conflicts with an earlier scalar key")
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigError(f"line {lineno}: {key!r} conflicts with an earlier section")
        node[parts[-1]] = [v.strip() for v in value.split(",")] if "," in value else value
    return root


def build_config(nested: dict, kind=None, seed=None, out_dir=None, trials=None) -> ExperimentConfig:
    """Validate a nested dict, applying CLI-style overrides first."""
    nested = dict(nested)
    if kind is not None:
        nested["kind"] = kind
    if seed is not None:
        nested["seed"] = seed
    if out_dir is not None:
        nested["out_dir"] = out_dir
    if trials is not None:
        nested.setdefault("train", {})
        if not isinstance(nested["train"], dict):
            raise ConfigError("'train' must be a section")
        nested["train"] = {**nested["train"], "trials": trials}
    try:
        return ExperimentConfig.model_validate(nested)
    except Exception as exc:
        raise ConfigError(str(exc)) from exc


def load_config_file(path, **overrides) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return build_config(parse_flat_text(text), **overrides)


def to_train_config(config: ExperimentConfig) -> TrainConfig:
    t = config.train
    return TrainConfig(
        epochs=t.epochs,
        batch_size=t.batch_size,
        learning_rate=t.learning_rate,
        dropout_input=t.dropout_input,
        dropout_hidden=t.dropout_hidden,
        max_norm=t.max_norm,
        clip_norm=t.clip_norm,
        lambda_warmup_epochs=t.lambda_warmup_epochs,
        lambda_final=t.lambda_final,
        trials=t.trials,
        seed=config.seed,
    )


def to_shift_spec(config: ExperimentConfig) -> SyntheticShiftSpec:
    s = config.data.synthetic
    return SyntheticShiftSpec(
        n_source=s.n_source,
        n_target=s.n_target,
        latent_dim=s.latent_dim,
        feature_dim=s.feature_dim,
        rotation_angle=s.rotation_angle,
        translation=s.translation_norm,
        noise_std=s.noise_std,
        seed=config.seed if s.seed is None else s.seed,
    )
