"""Conditional noisy-weight transformation and dual batch-norm routing.

A conditional layer owns one shared weight tensor theta, a trainable scalar
noise scale alpha, and two independent batch-norm branches.  During training a
binary condition picks the path: the clean branch convolves the raw weights
and normalizes with the clean statistics; the adversarial branch convolves
theta + alpha * eta (eta a fresh Gaussian draw whose std matches theta's) and
normalizes with the adversarial statistics.  At inference a continuous knob
lambda_n in [0, 1] rescales alpha and a threshold lambda_th picks the branch,
giving an in-place trade-off between clean accuracy and robustness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import (
    BNStats,
    Parameter,
    Tensor,
    batch_norm,
    conv2d,
    relu,
    scaled_noise_add,
    slice_features,
    slice_filters,
)
from .errors import ConfigError, DimensionError, StateError

ALPHA_INIT = 0.25
SUPPORTED_LAMBDA_TH = (0.0, 0.5)


@dataclass
class ConditionState:
    """Conditioning knobs: binary `lam` while training, (lambda_n, lambda_th) at inference."""

    lam: Optional[int] = None
    lambda_n: float = 0.0
    lambda_th: float = 0.0

    def __post_init__(self):
        if self.lam is not None and self.lam not in (0, 1):
            raise ConfigError(f"lam must be binary, got {self.lam}")
        if not 0.0 <= self.lambda_n <= 1.0:
            raise ConfigError(f"lambda_n must lie in [0, 1], got {self.lambda_n}")
        if self.lambda_th not in SUPPORTED_LAMBDA_TH:
            raise ConfigError(f"lambda_th must be one of {SUPPORTED_LAMBDA_TH}, got {self.lambda_th}")


def rescale_alpha(alpha: float, lambda_n: float, lambda_th: float) -> float:
    """Post-training noise re-scaling.

    lambda_th == 0.0 mode returns lambda_n * alpha.  lambda_th == 0.5 mode is
    piecewise: alpha * 2 * lambda_n on [0, 0.5], alpha * 2 * (lambda_n - 0.5)
    on (0.5, 1].  Note the second branch restarts near zero just past 0.5
    while the batch-norm branch switches; that discontinuity is intentional
    and exactly matches the rule as stated.
    """
    if not 0.0 <= lambda_n <= 1.0:
        raise ConfigError(f"lambda_n must lie in [0, 1], got {lambda_n}")
    if lambda_th not in SUPPORTED_LAMBDA_TH:
        raise ConfigError(f"lambda_th must be one of {SUPPORTED_LAMBDA_TH}, got {lambda_th}")
    if lambda_th == 0.0:
        return lambda_n * alpha
    if lambda_n <= 0.5:
        return alpha * 2 * lambda_n
    return alpha * 2 * (lambda_n - 0.5)


def rescale_factor(lambda_n: float, lambda_th: float) -> float:
    """Multiplier applied on top of a layer's alpha at inference."""
    return rescale_alpha(1.0, lambda_n, lambda_th)


def select_bn(state: ConditionState) -> str:
    """Pick the batch-norm branch: strictly lambda_n > lambda_th selects 'adv'.

    While training the binary condition routes directly: 0 -> clean, 1 -> adv.
    """
    if state.lam is not None:
        return "adv" if state.lam == 1 else "clean"
    return "adv" if state.lambda_n > state.lambda_th else "clean"


class NoisyWeight:
    """A weight tensor plus trainable noise scale and a per-layer noise stream.

    Fresh draws are zero-mean Gaussians whose std equals the std of the
    current (possibly width-sliced) weight entries; the last draw is cached so
    an attack and the subsequent loss pass see the same noise.
    """

    def __init__(self, theta: Parameter, rng: np.random.Generator, alpha_init: float = ALPHA_INIT):
        self.theta = theta
        self.alpha = Parameter(np.asarray(alpha_init, dtype=theta.data.dtype), role="alpha_scale")
        self.rng = rng
        # Escape hatch for baseline comparisons: with noise disabled every
        # path uses the raw weights and alpha never enters the tape.
        self.enabled = True
        self.last_eta: np.ndarray | None = None
        self._eta_key: tuple | None = None

    def _slice(self, key: tuple) -> np.ndarray:
        if self.theta.data.ndim == 4:
            c_out, c_in = key
            return self.theta.data[:c_out, :c_in]
        (feats,) = key
        return self.theta.data[:, :feats]

    def full_key(self) -> tuple:
        if self.theta.data.ndim == 4:
            return (self.theta.data.shape[0], self.theta.data.shape[1])
        return (self.theta.data.shape[1],)

    def sample(self, key: tuple | None = None) -> np.ndarray:
        """Draw fresh noise for the given slice; std tracks the current weights."""
        key = key or self.full_key()
        sub = self._slice(key)
        sigma = sub.std()
        eta = self.rng.standard_normal(sub.shape, dtype=sub.dtype) * sigma
        self.last_eta = eta
        self._eta_key = key
        return eta

    def eta(self, fresh: bool, key: tuple | None = None) -> np.ndarray:
        key = key or self.full_key()
        if fresh:
            return self.sample(key)
        if self.last_eta is None or self._eta_key != key:
            raise StateError("no cached noise for this slice; sample before reusing")
        return self.last_eta

    def reseed(self, rng: np.random.Generator) -> None:
        self.rng = rng
        self.last_eta = None
        self._eta_key = None


class DualBatchNorm:
    """Two fully independent batch-norm branches (statistics and affine)."""

    def __init__(self, channels: int, dtype=np.float32):
        self.channels = channels
        self.stats_clean = BNStats(channels, dtype)
        self.stats_adv = BNStats(channels, dtype)
        self.gamma_clean = Parameter(np.ones(channels, dtype=dtype), role="bn_gamma")
        self.beta_clean = Parameter(np.zeros(channels, dtype=dtype), role="bn_beta")
        self.gamma_adv = Parameter(np.ones(channels, dtype=dtype), role="bn_gamma")
        self.beta_adv = Parameter(np.zeros(channels, dtype=dtype), role="bn_beta")

    def branch(self, name: str) -> tuple[BNStats, Parameter, Parameter]:
        if name == "clean":
            return self.stats_clean, self.gamma_clean, self.beta_clean
        if name == "adv":
            return self.stats_adv, self.gamma_adv, self.beta_adv
        raise ValueError(f"unknown branch {name!r}")

    def parameters(self) -> list[Parameter]:
        return [self.gamma_clean, self.beta_clean, self.gamma_adv, self.beta_adv]


@dataclass(frozen=True)
class ForwardPlan:
    """Everything a single forward pass needs to know about routing.

    alpha_scale multiplies the layer's alpha: 0.0 means the raw weights are
    used untouched (and alpha/eta leave no trace on the tape), 1.0 is the
    training-time adversarial path, and inference passes the rescale factor.
    """

    alpha_scale: float
    bn_branch: str
    bn_mode: str  # train | frozen | eval
    sf_index: int = 0
    fresh_noise: bool = False
    param_grads: bool = True


def plan_train(lam: int, fresh_noise: bool = False) -> ForwardPlan:
    if lam not in (0, 1):
        raise ConfigError(f"training condition must be binary, got {lam}")
    return ForwardPlan(
        alpha_scale=float(lam),
        bn_branch="adv" if lam == 1 else "clean",
        bn_mode="train",
        fresh_noise=fresh_noise,
    )


def plan_eval(state: ConditionState, sf_index: int = 0) -> ForwardPlan:
    return ForwardPlan(
        alpha_scale=rescale_factor(state.lambda_n, state.lambda_th),
        bn_branch=select_bn(state),
        bn_mode="eval",
        sf_index=sf_index,
        param_grads=False,
    )


def plan_attack_train(sf_index: int = 0) -> ForwardPlan:
    """Attack target while training: the adversarial path with cached noise,
    batch statistics frozen so the attack never touches running stats."""
    return ForwardPlan(
        alpha_scale=1.0,
        bn_branch="adv",
        bn_mode="frozen",
        sf_index=sf_index,
        param_grads=False,
    )


def _as_leaf(p: Parameter, param_grads: bool) -> Tensor:
    return p if param_grads else Tensor(p.data)


def noisy_weight_tensor(w: NoisyWeight, plan: ForwardPlan, key: tuple | None = None) -> Tensor:
    """Weight tensor entering the convolution under the given plan.

    With alpha_scale == 0 this is the (sliced) raw weight, bit for bit; the
    noise and alpha contribute nothing, not even a tape node.
    """
    key = key or w.full_key()
    theta = _as_leaf(w.theta, plan.param_grads)
    if w.theta.data.ndim == 4:
        sliced = slice_filters(theta, key[0], key[1])
    else:
        sliced = slice_features(theta, key[0])
    if plan.alpha_scale == 0.0 or not w.enabled:
        return sliced
    eta = w.eta(plan.fresh_noise, key)
    if plan.param_grads:
        return scaled_noise_add(sliced, w.alpha, eta, plan.alpha_scale)
    s = plan.alpha_scale * float(w.alpha.data)
    return Tensor(sliced.data + s * eta)


def transform_weights(w: NoisyWeight, lam: int, fresh_noise: bool) -> Tensor:
    """theta + lam * alpha * eta over the full weight, on the training tape."""
    if lam not in (0, 1):
        raise ConfigError(f"lam must be binary, got {lam}")
    plan = ForwardPlan(alpha_scale=float(lam), bn_branch="adv" if lam else "clean",
                       bn_mode="train", fresh_noise=fresh_noise)
    return noisy_weight_tensor(w, plan)


class CondConv2d:
    """Conv block with weight conditioning: noisy conv -> selected BN -> ReLU.

    Carries no conv bias (a BN always follows).  One DualBatchNorm per
    slimming factor; the widths are fixed at construction.
    """

    def __init__(
        self,
        theta: Parameter,
        rng: np.random.Generator,
        stride: int,
        padding: int,
        slim_factors: tuple[float, ...] = (1.0,),
        dtype=np.float32,
        slim_input: bool = True,
    ):
        self.weight = NoisyWeight(theta, rng)
        self.stride = stride
        self.padding = padding
        self.slim_factors = slim_factors
        # The first layer of a network sees the image itself, whose channel
        # count never slims.
        self.slim_input = slim_input
        c_out = theta.data.shape[0]
        self.bns = [DualBatchNorm(math.ceil(f * c_out), dtype) for f in slim_factors]

    def widths(self, sf_index: int) -> tuple[int, int]:
        f = self.slim_factors[sf_index]
        c_out_full, c_in_full = self.weight.theta.data.shape[:2]
        c_in = math.ceil(f * c_in_full) if self.slim_input else c_in_full
        return math.ceil(f * c_out_full), c_in

    def forward(self, x: Tensor, plan: ForwardPlan) -> Tensor:
        c_out, c_in = self.widths(plan.sf_index)
        if x.data.shape[1] != c_in:
            raise DimensionError(f"layer expected {c_in} input channels, got {x.data.shape[1]}")
        w_hat = noisy_weight_tensor(self.weight, plan, (c_out, c_in))
        y = conv2d(x, w_hat, self.stride, self.padding)
        dbn = self.bns[plan.sf_index]
        stats, gamma, beta = dbn.branch(plan.bn_branch)
        y = batch_norm(y, stats, _as_leaf(gamma, plan.param_grads), _as_leaf(beta, plan.param_grads), plan.bn_mode)
        return relu(y)

    def parameters(self) -> list[Parameter]:
        out = [self.weight.theta, self.weight.alpha]
        for dbn in self.bns:
            out.extend(dbn.parameters())
        return out


def conditional_forward(layer: CondConv2d, x: Tensor, state: ConditionState, mode: str) -> Tensor:
    """Route one layer per the condition: binary path in train mode, rescaled
    (lambda_n, lambda_th) path in eval mode."""
    if mode == "train":
        if state.lam is None:
            raise ConfigError("train-mode conditional forward needs a binary lam")
        plan = plan_train(state.lam, fresh_noise=False)
    elif mode == "eval":
        plan = plan_eval(state)
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    return layer.forward(x, plan)
