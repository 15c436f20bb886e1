"""Network assembly: a stack of conditional conv blocks, global average
pooling, and a noisy fully-connected classifier.

All widths are shared storage: a slimmed sub-network forwards through leading
slices of the very same parameter arrays, so a weight update inside the slice
is immediately visible to every other width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .autodiff import Parameter, Tensor, cross_entropy, global_avg_pool, linear
from .conditioning import CondConv2d, ForwardPlan, NoisyWeight, noisy_weight_tensor
from .errors import ConfigError


@dataclass
class ArchConfig:
    channels: tuple[int, ...] = (32, 48, 64, 96)
    kernel: int = 3
    strides: tuple[int, ...] = (1, 2, 1, 2)
    padding: int = 1

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.strides = tuple(int(s) for s in self.strides)
        if len(self.channels) != len(self.strides):
            raise ConfigError("channels and strides must have equal length")
        if any(c < 1 for c in self.channels) or any(s < 1 for s in self.strides):
            raise ConfigError("channels and strides must be positive")


class Classifier:
    """Final FC layer: noisy weight, plain (never noised) bias."""

    def __init__(self, theta: Parameter, bias: Parameter, rng: np.random.Generator):
        self.weight = NoisyWeight(theta, rng)
        self.bias = bias

    def forward(self, feats: Tensor, plan: ForwardPlan, n_features: int) -> Tensor:
        w_hat = noisy_weight_tensor(self.weight, plan, (n_features,))
        bias = self.bias if plan.param_grads else Tensor(self.bias.data)
        return linear(feats, w_hat, bias)

    def parameters(self) -> list[Parameter]:
        return [self.weight.theta, self.weight.alpha, self.bias]


class CondNet:
    """Conditionally trained CNN over NCHW inputs in [0, 1]."""

    def __init__(
        self,
        arch: ArchConfig,
        in_channels: int,
        n_classes: int,
        seed: int,
        slim_factors: tuple[float, ...] = (1.0,),
        dtype=np.float32,
    ):
        slim_factors = tuple(sorted(float(f) for f in slim_factors))
        if not slim_factors or slim_factors[-1] != 1.0:
            raise ConfigError("slim factors must be a non-empty set containing 1.0")
        if slim_factors[0] <= 0.0:
            raise ConfigError("slim factors must be positive")
        self.arch = arch
        self.in_channels = in_channels
        self.n_classes = n_classes
        self.seed = seed
        self.slim_factors = slim_factors
        self.dtype = np.dtype(dtype)

        self.blocks: list[CondConv2d] = []
        c_prev = in_channels
        for i, (c_out, stride) in enumerate(zip(arch.channels, arch.strides)):
            init = rngmod.stream(seed, rngmod.INIT, i)
            fan_in = c_prev * arch.kernel * arch.kernel
            theta = Parameter(
                init.standard_normal((c_out, c_prev, arch.kernel, arch.kernel), dtype=self.dtype)
                * np.sqrt(2.0 / fan_in, dtype=self.dtype),
                role="conv_weight",
            )
            self.blocks.append(
                CondConv2d(
                    theta,
                    rngmod.stream(seed, rngmod.NOISE, i),
                    stride,
                    arch.padding,
                    slim_factors,
                    self.dtype,
                    slim_input=(i > 0),
                )
            )
            c_prev = c_out
        fc_index = len(self.blocks)
        init = rngmod.stream(seed, rngmod.INIT, fc_index)
        fc_theta = Parameter(
            init.standard_normal((n_classes, c_prev), dtype=self.dtype) * np.sqrt(2.0 / c_prev, dtype=self.dtype),
            role="fc_weight",
        )
        fc_bias = Parameter(np.zeros(n_classes, dtype=self.dtype), role="fc_bias")
        self.fc = Classifier(fc_theta, fc_bias, rngmod.stream(seed, rngmod.NOISE, fc_index))

    # -- forward ---------------------------------------------------------

    def forward(self, x: Tensor | np.ndarray, plan: ForwardPlan) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        y = x
        for block in self.blocks:
            y = block.forward(y, plan)
        feats = global_avg_pool(y)
        n_features, _ = self.blocks[-1].widths(plan.sf_index)
        return self.fc.forward(feats, plan, n_features)

    def loss(self, x, labels, plan: ForwardPlan) -> tuple[Tensor, Tensor]:
        logits = self.forward(x, plan)
        return cross_entropy(logits, labels), logits

    # -- parameter plumbing ----------------------------------------------

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for block in self.blocks:
            out.extend(block.parameters())
        out.extend(self.fc.parameters())
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def noisy_weights(self) -> list[tuple[str, NoisyWeight]]:
        """The weights that receive noise; also exactly the prunable set."""
        out = [(f"conv{i}", b.weight) for i, b in enumerate(self.blocks)]
        out.append(("fc", self.fc.weight))
        return out

    def masked_parameters(self) -> list[tuple[str, Parameter]]:
        return [(name, w.theta) for name, w in self.noisy_weights()]

    def sf_index(self, factor: float) -> int:
        try:
            return self.slim_factors.index(factor)
        except ValueError:
            raise ConfigError(f"slim factor {factor} not in {self.slim_factors}") from None

    def resample_noise(self, sf_index: int = 0) -> None:
        """Fresh noise draw for every noisy weight at the given width."""
        for i, block in enumerate(self.blocks):
            block.weight.sample(block.widths(sf_index))
        n_features, _ = self.blocks[-1].widths(sf_index)
        self.fc.weight.sample((n_features,))

    def set_noise_enabled(self, enabled: bool) -> None:
        for _, w in self.noisy_weights():
            w.enabled = enabled

    def reseed_noise(self, seed: int, purpose: int) -> None:
        for i, (_, w) in enumerate(self.noisy_weights()):
            w.reseed(rngmod.stream(seed, purpose, i))

    def active_param_count(self, masks: dict[str, np.ndarray] | None = None, sf_index: int = 0) -> int:
        """Parameters of the deployed slice: active weights, bias, the chosen
        BN pair's affine terms, and the per-layer alphas."""
        total = 0
        for i, block in enumerate(self.blocks):
            c_out, c_in = block.widths(sf_index)
            m = masks.get(f"conv{i}") if masks else None
            if m is not None:
                total += int(m[:c_out, :c_in].sum())
            else:
                total += c_out * c_in * self.arch.kernel * self.arch.kernel
            total += 1  # alpha
            total += sum(p.data.size for p in block.bns[sf_index].parameters())
        n_features, _ = self.blocks[-1].widths(sf_index)
        m = masks.get("fc") if masks else None
        total += int(m[:, :n_features].sum()) if m is not None else self.n_classes * n_features
        total += 1  # fc alpha
        total += self.fc.bias.data.size
        return total


def build_net(
    arch: ArchConfig | None = None,
    in_channels: int = 1,
    n_classes: int = 2,
    seed: int = 0,
    slim_factors: tuple[float, ...] = (1.0,),
    dtype=np.float32,
) -> CondNet:
    return CondNet(arch or ArchConfig(), in_channels, n_classes, seed, slim_factors, dtype)
