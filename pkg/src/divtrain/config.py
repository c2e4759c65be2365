"""Experiment configuration: a YAML document validated before any work starts.

Unknown keys are rejected, and errors name the offending key path.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .attacks import KINDS
from .gaas import SUPPORTED_ORDERS
from .train import RECIPES


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SyntheticData(_Strict):
    classes: int = Field(10, ge=2)
    per_class: int = Field(50, ge=1)
    test_per_class: int = Field(20, ge=1)
    shape: list[int] = Field(default_factory=lambda: [1, 8, 8])


class DataSection(_Strict):
    source: Literal["synthetic", "idx", "mnist-sample"] = "synthetic"
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    train_limit: Optional[int] = Field(None, ge=1)
    test_limit: Optional[int] = Field(None, ge=1)
    synthetic: SyntheticData = Field(default_factory=SyntheticData)

    @model_validator(mode="after")
    def _paths(self):
        if self.source == "idx":
            missing = [k for k in ("train_images", "train_labels", "test_images", "test_labels") if not getattr(self, k)]
            if missing:
                raise ValueError(f"idx source needs {', '.join(missing)}")
        return self


class ModelSection(_Strict):
    specs: list[str] = Field(default_factory=lambda: ["C8-C16-M-C32-M-FC128-FC10"])
    ensemble_size: int = Field(3, ge=1)
    alpha: float = Field(0.1, gt=0, lt=1)

    @model_validator(mode="after")
    def _sizes(self):
        if len(self.specs) not in (1, self.ensemble_size):
            raise ValueError(f"give 1 spec or {self.ensemble_size} specs, got {len(self.specs)}")
        return self


class AugmentSection(_Strict):
    max_shift: int = Field(2, ge=0)
    pad: int = Field(2, ge=0)
    flip: bool = False

    @model_validator(mode="after")
    def _shift(self):
        if self.max_shift > self.pad:
            raise ValueError("max_shift cannot exceed pad")
        return self


class TrainSection(_Strict):
    recipe: Literal[RECIPES] = "base"  # type: ignore[valid-type]
    epochs: int = Field(5, ge=1)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(0.001, gt=0)
    lam: float = Field(0.5, ge=0)
    noise_epsilon: float = Field(0.3, gt=0)
    adv_epsilon: float = Field(0.3, ge=0)
    augment: AugmentSection = Field(default_factory=AugmentSection)
    track_alignment: bool = True
    static_epochs: Optional[int] = Field(None, ge=1)


class AttackEntry(_Strict):
    kind: Literal[KINDS]  # type: ignore[valid-type]
    epsilon: list[float]
    steps: Optional[int] = Field(None, ge=1)
    decay: float = Field(1.0, ge=0)
    confidence: float = Field(50.0, ge=0)
    step_size: Optional[float] = Field(None, gt=0)

    @field_validator("epsilon", mode="before")
    @classmethod
    def _listify(cls, v):
        return v if isinstance(v, list) else [v]

    @field_validator("epsilon")
    @classmethod
    def _nonneg(cls, v):
        if any(e < 0 for e in v):
            raise ValueError("epsilon values must be non-negative")
        return v


class AnalysisSection(_Strict):
    coherence_bins: int = Field(20, ge=1)
    coherence_limit: Optional[int] = Field(None, ge=1)
    gaas_orders: list[int] = Field(default_factory=lambda: [4, 16, 64])
    gaas_epsilons: list[float] = Field(default_factory=lambda: [0.03, 0.06, 0.09])
    gaas_correct_only: bool = False
    gaas_limit: Optional[int] = Field(None, ge=1)

    @field_validator("gaas_orders")
    @classmethod
    def _orders(cls, v):
        bad = [k for k in v if k not in SUPPORTED_ORDERS]
        if bad:
            raise ValueError(f"unsupported Hadamard orders {bad}; supported orders are {list(SUPPORTED_ORDERS)}")
        return v


class ExperimentConfig(_Strict):
    seed: int = 0
    output_dir: str = "runs/default"
    data: DataSection = Field(default_factory=DataSection)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    attacks: list[AttackEntry] = Field(default_factory=lambda: [AttackEntry(kind="FGSM", epsilon=[0.1, 0.3])])
    analysis: AnalysisSection = Field(default_factory=AnalysisSection)


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def parse_config(doc: dict | None, base_dir: Path | None = None) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.model_validate(doc or {})
    except ValidationError as err:
        raise ConfigError(_format_errors(err)) from None
    if base_dir is not None:
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            value = getattr(cfg.data, key)
            if value and not Path(value).is_absolute():
                setattr(cfg.data, key, str((base_dir / value).resolve()))
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if doc is not None and not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(doc, path.parent)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True)
