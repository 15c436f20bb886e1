"""Experiment configuration schema.

Pydantic models with unknown keys rejected; the CLI loads a JSON file into
``ExperimentConfig`` and may override dotted keys from flags.  Validation
failures surface as ``ConfigError`` so they map to the config exit code.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .attacks import AttackConfig
from .autodiff import OptimizerConfig
from .errors import ConfigError

LAMBDA_N_DEFAULT = [0.0, 0.2, 0.7, 1.0]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class OptimizerModel(StrictModel):
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4

    def build(self, total_epochs: int) -> OptimizerConfig:
        return OptimizerConfig(self.learning_rate, self.momentum, self.weight_decay, max(total_epochs, 1))


class AttackModel(StrictModel):
    name: Literal["pgd", "fgsm", "none"] = "pgd"
    epsilon: float = 8 / 255
    steps: int = 7
    step_size: float = 2 / 255
    random_start: bool = True

    def build(self) -> Optional[AttackConfig]:
        if self.name == "none":
            return None
        steps = 1 if self.name == "fgsm" else self.steps
        return AttackConfig(self.epsilon, steps, self.step_size, self.random_start)


class ModelSpec(StrictModel):
    channels: list[int] = [32, 48, 64, 96]
    kernel: int = 3
    strides: list[int] = [1, 2, 1, 2]
    padding: int = 1


class PruneModel(StrictModel):
    density: float = Field(gt=0.0, le=1.0)
    granularity: Literal["irregular", "channel"] = "irregular"
    prune_rate: float = Field(default=0.3, ge=0.0, lt=1.0)


class SlimModel(StrictModel):
    factors: list[float]

    @model_validator(mode="after")
    def _check(self):
        if not self.factors or 1.0 not in self.factors:
            raise ValueError("slim factors must contain 1.0")
        if any(not 0.0 < f <= 1.0 for f in self.factors):
            raise ValueError("slim factors must lie in (0, 1]")
        if len(set(self.factors)) != len(self.factors):
            raise ValueError("slim factors must be unique")
        return self


class TrainModel(StrictModel):
    epochs: int = Field(ge=0)
    batch_size: int = 128
    attack: AttackModel = AttackModel(epsilon=0.1, steps=3, step_size=0.033)
    optimizer: OptimizerModel = OptimizerModel()

    @model_validator(mode="after")
    def _check(self):
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError("batch_size must be even and >= 2")
        if self.attack.name == "none":
            raise ValueError("training requires an attack (use epsilon 0 to disable perturbation)")
        return self


class EvalModel(StrictModel):
    lambda_n_set: list[float] = LAMBDA_N_DEFAULT
    lambda_th: float = 0.0
    attack: AttackModel = AttackModel(epsilon=0.1, steps=7, step_size=0.033, random_start=False)
    slim_factor: float = 1.0

    @model_validator(mode="after")
    def _check(self):
        if not self.lambda_n_set:
            raise ValueError("lambda_n_set must not be empty")
        if any(not 0.0 <= v <= 1.0 for v in self.lambda_n_set):
            raise ValueError("lambda_n values must lie in [0, 1]")
        if self.lambda_th not in (0.0, 0.5):
            raise ValueError("lambda_th must be 0.0 or 0.5")
        return self


class DataPaths(StrictModel):
    train: str
    test: str


class ExperimentConfig(StrictModel):
    mode: Literal["float", "floats_i", "floats_c", "floats_slim"]
    seed: int = 0
    data: DataPaths
    out_dir: str
    model: ModelSpec = ModelSpec()
    train: TrainModel
    eval: EvalModel = EvalModel()
    prune: Optional[PruneModel] = None
    slim: Optional[SlimModel] = None
    record_walltime: bool = False

    @model_validator(mode="after")
    def _check(self):
        if self.mode in ("floats_i", "floats_c") and self.prune is None:
            raise ValueError(f"mode {self.mode} requires a prune section")
        if self.mode == "floats_i" and self.prune.granularity != "irregular":
            raise ValueError("floats_i uses irregular granularity")
        if self.mode == "floats_c" and self.prune.granularity != "channel":
            raise ValueError("floats_c uses channel granularity")
        if self.mode == "floats_slim" and self.slim is None:
            raise ValueError("floats_slim requires a slim section")
        if self.mode != "floats_slim" and self.slim is not None:
            raise ValueError("slim section is only valid in floats_slim mode")
        if self.mode == "floats_slim" and self.prune is not None and self.prune.granularity != "irregular":
            raise ValueError("slim training combines only with irregular masks")
        return self


def parse_config(payload: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigError(str(e)) from None


def apply_overrides(payload: dict, overrides: dict[str, str]) -> dict:
    """Apply dotted-path CLI overrides onto a raw config dict.

    Values are parsed as JSON when possible so numbers, booleans, and lists
    work; everything else stays a string.
    """
    import copy
    import json

    out = copy.deepcopy(payload)
    for dotted, raw in overrides.items():
        try:
            value = json.loads(raw)
        except ValueError:
            value = raw
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {dotted!r} crosses a non-object value")
        node[parts[-1]] = value
    return out
