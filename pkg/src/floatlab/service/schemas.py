"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from ..config import ExperimentConfig


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# -- synth ------------------------------------------------------------------


class SynthRequest(Strict):
    classes: int = Field(ge=1)
    per_class: int = Field(ge=1)
    channels: int = 1
    height: int = 8
    width: int = 8
    seed: int = 0
    out_path: str


class SynthResponse(Strict):
    out_path: str
    n_samples: int
    n_classes: int
    shape: list[int]
    sha256: str


# -- train ------------------------------------------------------------------


class TrainRequest(Strict):
    config: ExperimentConfig


class EpochStats(Strict):
    epoch: int
    loss_clean: float
    loss_adv: float
    acc_clean: float
    acc_adv: float
    lr: float


class TrainResponse(Strict):
    run_id: str
    checkpoint_path: str
    metrics_path: str
    epochs: int
    density: Optional[float] = None
    history: list[EpochStats]


# -- eval / sweep -------------------------------------------------------------


class EvalRequest(Strict):
    checkpoint: str
    dataset: str
    lambda_n: float = Field(ge=0.0, le=1.0)
    lambda_th: float = 0.0
    attack: str = "pgd7"
    epsilon: float = 0.1
    step_size: float = 0.033
    slim_factor: float = 1.0
    seed: Optional[int] = None


class EvalResponse(Strict):
    lambda_n: float
    lambda_th: float
    ca_percent: float
    ra_percent: Optional[float] = None
    attack_name: str
    slim_factor: float
    params: int


class SweepRequest(Strict):
    checkpoint: str
    dataset: str
    lambda_n_set: list[float]
    lambda_th: float = 0.0
    attacks: list[str] = ["pgd7"]
    out_dir: str
    epsilon: float = 0.1
    step_size: float = 0.033
    slim_factor: float = 1.0
    seed: Optional[int] = None


class SweepResponse(Strict):
    rows: list[EvalResponse]
    sweep_metrics_path: str
    tradeoff_path: str


# -- cost ---------------------------------------------------------------------


class HwModel(Strict):
    io_bits: int = 64
    weight_bits: int = 8
    banks: int = 4
    mults: int = 8
    read_ns: float = 9.0
    mult_ns: float = 4.0


class LayerModel(Strict):
    kind: Literal["conv", "fc"] = "conv"
    k: int
    c_in: int
    c_out: int
    h_out: int
    w_out: int
    conditioned: bool = True
    name: str = ""


class CostRequest(Strict):
    preset: Optional[str] = None
    layers: Optional[list[LayerModel]] = None
    variant: Literal["float", "oat"] = "float"
    hw: HwModel = HwModel()
    csv_path: Optional[str] = None
    json_path: Optional[str] = None


class DelayRow(Strict):
    name: str
    k: int
    c_in: int
    c_out: int
    h_out: int
    w_out: int
    conv_ns: float
    float_ns: float
    oat_ns: float
    oat_over_float: float


class CostResponse(Strict):
    params: int
    flops: int
    noise_add_ops: int
    noise_overhead_pct: float
    max_oat_over_float: float
    delays: list[DelayRow]
    csv_path: Optional[str] = None
    json_path: Optional[str] = None


# -- inspect --------------------------------------------------------------------


class InspectRequest(Strict):
    checkpoint: str


class LayerReport(Strict):
    name: str
    shape: list[int]
    weights: int
    active: int
    density: float
    alpha: float
    nonzero: int


class InspectResponse(Strict):
    mode: Optional[str]
    run_id: Optional[str]
    epoch: Optional[int]
    seed: int
    slim_factors: list[float]
    n_classes: int
    mask: Optional[dict]
    layers: list[LayerReport]
    total_weights: int
    active_weights: int
    density: float


class ErrorBody(Strict):
    kind: str
    stage: Optional[str] = None
    message: str
