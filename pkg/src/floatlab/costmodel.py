"""Closed-form hardware accounting for a sequential read-then-multiply
Von-Neumann pipeline, plus parameter/FLOP counting for the preset topologies.

All counts use exact integer ceilings, so results are identical across
platforms; only the final nanosecond scaling multiplies by the read/multiply
times.  FLOPs are reported in the multiply-accumulate convention (one MAC =
one FLOP), which is the convention the preset reference figures use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

from .errors import ConfigError


def _ceil_div(a: int, b: int) -> int:
    if b <= 0:
        raise ConfigError("ceil division by a non-positive value")
    return -(-a // b)


@dataclass(frozen=True)
class HwParams:
    """Hardware constants: memory IO bandwidth (bits/cycle), stored weight
    width (bits), bank and multiplier counts, and 65nm-class read/multiply
    times in nanoseconds."""

    io_bits: int = 64
    weight_bits: int = 8
    banks: int = 4
    mults: int = 8
    read_ns: float = 9.0
    mult_ns: float = 4.0

    def __post_init__(self):
        for name in ("io_bits", "weight_bits", "banks", "mults", "read_ns", "mult_ns"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"hardware parameter {name} must be positive")


@dataclass(frozen=True)
class LayerSpec:
    """Geometry of one conv or FC layer.

    ``conditioned`` marks layers that would carry a feature-modulation block
    in the activation-conditioned baseline (main-path convs; shortcut convs
    and the FC do not).
    """

    kind: Literal["conv", "fc"]
    k: int
    c_in: int
    c_out: int
    h_out: int
    w_out: int
    conditioned: bool = True
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("conv", "fc"):
            raise ConfigError(f"layer kind must be conv or fc, got {self.kind!r}")
        for field_name in ("k", "c_in", "c_out", "h_out", "w_out"):
            v = getattr(self, field_name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"layer field {field_name} must be a positive integer, got {v!r}")

    @property
    def weights(self) -> int:
        return self.k * self.k * self.c_in * self.c_out

    @property
    def macs(self) -> int:
        return self.weights * self.h_out * self.w_out


def _read_cycles(n_weights: int, hw: HwParams) -> int:
    # ceil(n / ((io_bits / weight_bits) * banks)) done in exact integers
    return _ceil_div(n_weights * hw.weight_bits, hw.io_bits * hw.banks)


def conv_delay(layer: LayerSpec, hw: HwParams) -> float:
    """Baseline layer delay: weight reads plus output-pixel multiply passes."""
    n = layer.weights
    reads = _read_cycles(n, hw)
    mults = _ceil_div(n, hw.mults)
    return reads * hw.read_ns + mults * layer.h_out * layer.w_out * hw.mult_ns


def float_conv_delay(layer: LayerSpec, hw: HwParams) -> float:
    """Noise-conditioned layer delay: one extra multiply pass folds the noise
    scale into the weights before the spatial passes; reading the scalar scale
    itself is ignored."""
    n = layer.weights
    reads = _read_cycles(n, hw)
    mults = _ceil_div(n, hw.mults)
    return reads * hw.read_ns + mults * (1 + layer.h_out * layer.w_out) * hw.mult_ns


def oat_conv_delay(layer: LayerSpec, hw: HwParams) -> float:
    """Activation-conditioned (feature-modulation) layer delay: the two extra
    FC stages add 2*C_o + 4*C_o^2 weights to read and multiply."""
    n = layer.weights
    extra = 2 * layer.c_out + 4 * layer.c_out * layer.c_out
    reads = _read_cycles(n + extra, hw)
    mults = _ceil_div(n, hw.mults)
    extra_mults = _ceil_div(extra, hw.mults)
    return reads * hw.read_ns + mults * layer.h_out * layer.w_out * hw.mult_ns + extra_mults * hw.mult_ns


def delay_table(layers: list[LayerSpec], hw: HwParams) -> list[dict]:
    """Per-conv-layer delays for all three models plus the overhead ratio."""
    rows = []
    for layer in layers:
        if layer.kind != "conv":
            continue
        base = conv_delay(layer, hw)
        noisy = float_conv_delay(layer, hw)
        film = oat_conv_delay(layer, hw)
        rows.append(
            {
                "name": layer.name,
                "k": layer.k,
                "c_in": layer.c_in,
                "c_out": layer.c_out,
                "h_out": layer.h_out,
                "w_out": layer.w_out,
                "conv_ns": base,
                "float_ns": noisy,
                "oat_ns": film,
                "oat_over_float": film / noisy,
            }
        )
    return rows


def count_params_flops(layers: list[LayerSpec], variant: Literal["float", "oat"]) -> dict:
    """Parameter, MAC-FLOP, and noise-add totals over conv/FC layers.

    float: every conv weight and the FC weight receive additive noise, one
    add per stored weight.  oat: feature-modulation blocks add
    4*C_o^2 + 2*C_o parameters per conditioned conv and no weight noise.
    Batch-norm and noise-scale storage are excluded throughout.
    """
    if variant not in ("float", "oat"):
        raise ConfigError(f"variant must be float or oat, got {variant!r}")
    params = 0
    flops = 0
    noise_add_ops = 0
    for layer in layers:
        w = layer.weights
        params += w
        flops += layer.macs
        if layer.kind == "fc":
            params += layer.c_out  # bias
        if variant == "float":
            noise_add_ops += w
        elif layer.kind == "conv" and layer.conditioned:
            params += 4 * layer.c_out * layer.c_out + 2 * layer.c_out
    return {"params": params, "flops": flops, "noise_add_ops": noise_add_ops}


# ---------------------------------------------------------------------------
# Preset topologies (32x32-style stems, shortcut convs counted).


def _conv(name, k, c_in, c_out, size, conditioned=True) -> LayerSpec:
    return LayerSpec("conv", k, c_in, c_out, size, size, conditioned, name)


def _basic_block_arch(stem_width: int, stages: list[tuple[int, int, int]], input_size: int,
                      n_classes: int) -> list[LayerSpec]:
    """Shared builder for basic-block residual families.

    ``stages`` rows are (width, blocks, first_stride).  Shortcut 1x1 convs are
    inserted whenever a block changes width or stride; they are counted but
    not conditioned.
    """
    layers = [_conv("stem", 3, 3, stem_width, input_size)]
    c_prev = stem_width
    size = input_size
    for si, (width, blocks, first_stride) in enumerate(stages):
        for b in range(blocks):
            stride = first_stride if b == 0 else 1
            size_out = size // stride
            tag = f"s{si}b{b}"
            layers.append(_conv(f"{tag}.conv1", 3, c_prev, width, size_out))
            layers.append(_conv(f"{tag}.conv2", 3, width, width, size_out))
            if stride != 1 or c_prev != width:
                layers.append(_conv(f"{tag}.shortcut", 1, c_prev, width, size_out, conditioned=False))
            c_prev = width
            size = size_out
    layers.append(LayerSpec("fc", 1, c_prev, n_classes, 1, 1, conditioned=False, name="fc"))
    return layers


def resnet34(n_classes: int = 10, input_size: int = 32) -> list[LayerSpec]:
    return _basic_block_arch(64, [(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)], input_size, n_classes)


def wrn16_8(n_classes: int = 10, input_size: int = 32) -> list[LayerSpec]:
    return _basic_block_arch(16, [(128, 2, 1), (256, 2, 2), (512, 2, 2)], input_size, n_classes)


def wrn40_2(n_classes: int = 10, input_size: int = 96) -> list[LayerSpec]:
    return _basic_block_arch(16, [(32, 6, 1), (64, 6, 2), (128, 6, 2)], input_size, n_classes)


PRESETS = {"resnet34": resnet34, "wrn16_8": wrn16_8, "wrn40_2": wrn40_2}


def preset(name: str) -> list[LayerSpec]:
    try:
        builder = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return builder()
