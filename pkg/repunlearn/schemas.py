from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import List, Optional
from enum import Enum


class OptimizerEnum(str, Enum):
    ADAM = "adam"
    ADAMW = "adamw"
    SGD = "sgd"


class ActivationEnum(str, Enum):
    RELU = "relu"
    TANH = "tanh"


class UnlearnModeEnum(str, Enum):
    CLASS = "class"
    RANDOM = "random"


class RegimeEnum(str, Enum):
    STANDARD = "standard"
    ZERO_SHOT = "zero_shot"


# Dataset schemas
class MixtureConfig(BaseModel):
    """Circle-mean isotropic Gaussian mixture; defaults reproduce the six-class toy set"""
    model_config = ConfigDict(extra="forbid")

    n_classes: int = 6
    dim: int = 10
    radius: float = 5.0
    tau: float = 0.5  # std of the off-circle mean coordinates
    sigma: float = 1.0  # within-class std
    n_per_class: int = 250
    n_test_per_class: Optional[int] = None  # None -> same as n_per_class
    seed: int = 0

    @field_validator('n_classes')
    @classmethod
    def validate_n_classes(cls, v):
        if v < 2:
            raise ValueError("Mixture needs at least 2 classes")
        return v

    @field_validator('dim')
    @classmethod
    def validate_dim(cls, v):
        if v < 2:
            raise ValueError("Feature dimension must be at least 2 (class means live on a circle)")
        return v

    @field_validator('radius', 'sigma')
    @classmethod
    def validate_positive(cls, v, info):
        if not v > 0:
            raise ValueError(f"{info.field_name} must be positive")
        return v

    @field_validator('tau')
    @classmethod
    def validate_tau(cls, v):
        if v < 0:
            raise ValueError("tau must be non-negative")
        return v

    @field_validator('n_per_class', 'n_test_per_class')
    @classmethod
    def validate_counts(cls, v, info):
        if v is not None and v < 1:
            raise ValueError(f"{info.field_name} must be at least 1")
        return v

    @field_validator('seed')
    @classmethod
    def validate_seed(cls, v):
        if v < 0:
            raise ValueError("Seeds are unsigned integers")
        return v

    @property
    def test_per_class(self) -> int:
        return self.n_test_per_class if self.n_test_per_class is not None else self.n_per_class


# Model schemas
class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=100, ge=0)
    batch_size: int = Field(default=64, ge=1)
    lr: float = Field(default=1e-3, gt=0)
    weight_decay: float = Field(default=5e-4, ge=0)
    optimizer: OptimizerEnum = OptimizerEnum.ADAM
    seed: int = Field(default=0, ge=0)


class ModelConfig(BaseModel):
    """Encoder architecture: input -> hidden_dims -> representation_dim -> classes"""
    model_config = ConfigDict(extra="forbid")

    hidden_dims: List[int] = [32]
    representation_dim: int = Field(default=2, ge=1)
    activation: ActivationEnum = ActivationEnum.RELU
    train: TrainConfig = Field(default_factory=TrainConfig)
    finetune_epochs: int = Field(default=10, ge=0)
    finetune_lr: float = Field(default=1e-3, gt=0)

    @field_validator('hidden_dims')
    @classmethod
    def validate_hidden_dims(cls, v):
        if any(width < 1 for width in v):
            raise ValueError("Hidden widths must be positive")
        return v

    def layer_dims(self, input_dim: int, n_classes: int) -> List[int]:
        return [input_dim, *self.hidden_dims, self.representation_dim, n_classes]


# Unlearning schemas
class UnlearnConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    beta: float = 1e-3
    lr: float = Field(default=1e-2, gt=0)
    retain_batch: int = Field(default=64, ge=1)
    forget_batch: int = Field(default=64, ge=1)
    reference_batch: int = Field(default=64, ge=1)
    max_epochs: int = Field(default=1000, ge=1)
    tolerance: float = Field(default=1e-5, ge=0)
    seed: int = Field(default=0, ge=0)
    depth: int = 1
    hidden_widths: Optional[List[int]] = None  # None -> 32 per hidden layer

    @field_validator('beta')
    @classmethod
    def validate_beta(cls, v):
        if v < 0:
            raise ValueError("beta must be non-negative")
        return v

    @field_validator('depth')
    @classmethod
    def validate_depth(cls, v):
        if v not in [0, 1, 2]:
            raise ValueError("Transformation depth must be 0, 1, or 2")
        return v

    @model_validator(mode='after')
    def validate_widths(self):
        if self.hidden_widths is not None:
            if len(self.hidden_widths) != self.depth:
                raise ValueError(
                    f"hidden_widths has {len(self.hidden_widths)} entries for depth {self.depth}"
                )
            if any(width < 1 for width in self.hidden_widths):
                raise ValueError("Hidden widths must be positive")
        return self

    @property
    def widths(self) -> List[int]:
        if self.hidden_widths is not None:
            return list(self.hidden_widths)
        return [32] * self.depth


class UnlearnSection(UnlearnConfig):
    """Unlearning request: which samples to forget, which regime, and the optimizer settings"""
    mode: UnlearnModeEnum = UnlearnModeEnum.CLASS
    forget_classes: List[int] = [0]
    fraction: float = 0.1
    regime: RegimeEnum = RegimeEnum.STANDARD

    @field_validator('fraction')
    @classmethod
    def validate_fraction(cls, v):
        if not 0 < v < 1:
            raise ValueError("Random-unlearning fraction must lie strictly between 0 and 1")
        return v

    @model_validator(mode='after')
    def validate_forget_classes(self):
        if self.mode == UnlearnModeEnum.CLASS and not self.forget_classes:
            raise ValueError("Class unlearning needs at least one forget class")
        return self


# Evaluation schemas
class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mia_thresholds: int = Field(default=101, ge=2)
    seeds: List[int] = [0, 1, 2, 3, 4]
    timing_repeats: int = Field(default=3, ge=1)

    @field_validator('seeds')
    @classmethod
    def validate_seeds(cls, v):
        if not v:
            raise ValueError("At least one seed is required")
        if any(seed < 0 for seed in v):
            raise ValueError("Seeds are unsigned integers")
        return v


class SweepGrid(BaseModel):
    model_config = ConfigDict(extra="forbid")

    betas: List[float] = [1e-4, 1e-3, 1e-2, 1e-1]
    depths: List[int] = [0, 1, 2]
    seeds: List[int] = [0, 1, 2, 3, 4]

    @field_validator('betas', 'depths', 'seeds')
    @classmethod
    def validate_nonempty(cls, v, info):
        if not v:
            raise ValueError(f"Sweep axis '{info.field_name}' is empty")
        return v

    @field_validator('betas')
    @classmethod
    def validate_betas(cls, v):
        if any(beta < 0 for beta in v):
            raise ValueError("beta values must be non-negative")
        return v

    @field_validator('depths')
    @classmethod
    def validate_depths(cls, v):
        if any(depth not in [0, 1, 2] for depth in v):
            raise ValueError("Transformation depths must be 0, 1, or 2")
        return v


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dataset: MixtureConfig = Field(default_factory=MixtureConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    unlearn: UnlearnSection = Field(default_factory=UnlearnSection)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    sweep: SweepGrid = Field(default_factory=SweepGrid)
    output_dir: str = "runs/default"

    @model_validator(mode='after')
    def validate_forget_classes_in_range(self):
        if self.unlearn.mode == UnlearnModeEnum.CLASS:
            bad = [c for c in self.unlearn.forget_classes if not 0 <= c < self.dataset.n_classes]
            if bad:
                raise ValueError(f"Forget classes {bad} outside [0, {self.dataset.n_classes})")
            if len(set(self.unlearn.forget_classes)) >= self.dataset.n_classes:
                raise ValueError("Cannot forget every class; the retain set would be empty")
        return self
