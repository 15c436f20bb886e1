import math
from fractions import Fraction

import numpy as np
import pytest

from floatlab.costmodel import (
    HwParams,
    LayerSpec,
    conv_delay,
    count_params_flops,
    delay_table,
    float_conv_delay,
    oat_conv_delay,
    preset,
)
from floatlab.errors import ConfigError

EXAMPLE_HW = HwParams(io_bits=64, weight_bits=8, banks=4, mults=16, read_ns=9, mult_ns=4)
EXAMPLE_LAYER = LayerSpec("conv", 3, 16, 32, 8, 8)


def oracle_delays(layer, hw):
    """Independent evaluation with Fractions and math.ceil."""
    n = layer.k**2 * layer.c_in * layer.c_out
    extra = 2 * layer.c_out + 4 * layer.c_out**2
    read_div = Fraction(hw.io_bits, hw.weight_bits) * hw.banks
    hw_wo = layer.h_out * layer.w_out
    base = math.ceil(n / read_div) * hw.read_ns + math.ceil(n / hw.mults) * hw_wo * hw.mult_ns
    noisy = math.ceil(n / read_div) * hw.read_ns + math.ceil(n / hw.mults) * (1 + hw_wo) * hw.mult_ns
    film = (
        math.ceil((n + extra) / read_div) * hw.read_ns
        + math.ceil(n / hw.mults) * hw_wo * hw.mult_ns
        + math.ceil(extra / hw.mults) * hw.mult_ns
    )
    return base, noisy, film


class TestDelayFormulas:
    def test_worked_example_base(self):
        assert conv_delay(EXAMPLE_LAYER, EXAMPLE_HW) == 75024

    def test_worked_example_noisy(self):
        assert float_conv_delay(EXAMPLE_LAYER, EXAMPLE_HW) == 76176

    def test_noisy_minus_base_is_one_mult_pass(self):
        for layer in (EXAMPLE_LAYER, LayerSpec("conv", 1, 7, 13, 3, 5)):
            diff = float_conv_delay(layer, EXAMPLE_HW) - conv_delay(layer, EXAMPLE_HW)
            n = layer.k**2 * layer.c_in * layer.c_out
            assert diff == math.ceil(n / EXAMPLE_HW.mults) * EXAMPLE_HW.mult_ns

    def test_film_example_vs_oracle(self):
        assert oat_conv_delay(EXAMPLE_LAYER, EXAMPLE_HW) == oracle_delays(EXAMPLE_LAYER, EXAMPLE_HW)[2]

    def test_minimal_layer_overhead_terms(self):
        layer = LayerSpec("conv", 1, 1, 1, 1, 1)
        hw = HwParams(io_bits=8, weight_bits=8, banks=1, mults=4, read_ns=1, mult_ns=1)
        # 1 weight + (2 + 4) extra reads = ceil(7/1) reads; ceil(6/4)=2 extra mults
        assert oat_conv_delay(layer, hw) == 7 * 1 + 1 * 1 + 2 * 1

    def test_unit_pixel_doubles_mult_term(self):
        layer = LayerSpec("conv", 3, 4, 4, 1, 1)
        base = conv_delay(layer, EXAMPLE_HW)
        noisy = float_conv_delay(layer, EXAMPLE_HW)
        n = layer.weights
        mult = math.ceil(n / EXAMPLE_HW.mults) * EXAMPLE_HW.mult_ns
        assert noisy - base == mult
        assert noisy == base + mult  # (1 + 1) factor

    def test_infinite_parallelism_limit(self):
        layer = LayerSpec("conv", 3, 16, 32, 8, 8)
        hw = HwParams(io_bits=10**9, weight_bits=1, banks=10**9, mults=10**9, read_ns=9, mult_ns=4)
        assert conv_delay(layer, hw) == 9 + 64 * 4  # ceilings floor at 1

    def test_random_draws_match_oracle(self):
        rng = np.random.default_rng(2024)
        for _ in range(50):
            layer = LayerSpec(
                "conv",
                int(rng.integers(1, 8)),
                int(rng.integers(1, 512)),
                int(rng.integers(1, 512)),
                int(rng.integers(1, 64)),
                int(rng.integers(1, 64)),
            )
            hw = HwParams(
                io_bits=int(rng.integers(1, 256)),
                weight_bits=int(rng.integers(1, 33)),
                banks=int(rng.integers(1, 16)),
                mults=int(rng.integers(1, 64)),
                read_ns=int(rng.integers(1, 20)),
                mult_ns=int(rng.integers(1, 20)),
            )
            base, noisy, film = oracle_delays(layer, hw)
            assert conv_delay(layer, hw) == base
            assert float_conv_delay(layer, hw) == noisy
            assert oat_conv_delay(layer, hw) == film

    def test_overhead_orderings(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            layer = LayerSpec(
                "conv",
                int(rng.integers(1, 6)),
                int(rng.integers(1, 128)),
                int(rng.integers(1, 128)),
                int(rng.integers(1, 32)),
                int(rng.integers(1, 32)),
            )
            base = conv_delay(layer, EXAMPLE_HW)
            assert float_conv_delay(layer, EXAMPLE_HW) > base
            assert oat_conv_delay(layer, EXAMPLE_HW) > base

    def test_monotone_in_every_dimension(self):
        base = dict(kind="conv", k=3, c_in=16, c_out=32, h_out=8, w_out=8)
        for field in ("k", "c_in", "c_out", "h_out", "w_out"):
            lo = LayerSpec(**base)
            hi = LayerSpec(**{**base, field: base[field] + 3})
            for fn in (conv_delay, float_conv_delay, oat_conv_delay):
                assert fn(hi, EXAMPLE_HW) >= fn(lo, EXAMPLE_HW), field

    def test_invalid_specs_rejected(self):
        with pytest.raises(ConfigError):
            LayerSpec("conv", 0, 1, 1, 1, 1)
        with pytest.raises(ConfigError):
            LayerSpec("pool", 1, 1, 1, 1, 1)
        with pytest.raises(ConfigError):
            HwParams(io_bits=0)


class TestCounting:
    def test_unit_conv(self):
        layers = [LayerSpec("conv", 1, 1, 1, 1, 1)]
        out = count_params_flops(layers, "float")
        assert out == {"params": 1, "flops": 1, "noise_add_ops": 1}

    def test_fc_bias_counted_once(self):
        layers = [LayerSpec("fc", 1, 10, 4, 1, 1)]
        out = count_params_flops(layers, "float")
        assert out["params"] == 44
        assert out["flops"] == 40
        assert out["noise_add_ops"] == 40  # bias is never noised

    def test_film_overhead_only_on_conditioned_convs(self):
        layers = [
            LayerSpec("conv", 3, 2, 4, 5, 5, conditioned=True),
            LayerSpec("conv", 1, 2, 4, 5, 5, conditioned=False),
            LayerSpec("fc", 1, 4, 2, 1, 1, conditioned=False),
        ]
        base = count_params_flops(layers, "float")["params"]
        film = count_params_flops(layers, "oat")["params"]
        assert film - base == 4 * 16 + 2 * 4
        assert count_params_flops(layers, "oat")["noise_add_ops"] == 0


class TestPresets:
    def test_resnet34_reference_totals(self):
        layers = preset("resnet34")
        f = count_params_flops(layers, "float")
        o = count_params_flops(layers, "oat")
        assert abs(f["params"] - 21.28e6) / 21.28e6 < 0.02
        assert abs(f["flops"] - 1.165e9) / 1.165e9 < 0.02
        assert abs(o["params"] - 31.4e6) / 31.4e6 < 0.05

    def test_wrn_reference_totals(self):
        f16 = count_params_flops(preset("wrn16_8"), "float")
        assert abs(f16["params"] - 10.97e6) / 10.97e6 < 0.02
        assert abs(f16["flops"] - 1.55e9) / 1.55e9 < 0.02
        f40 = count_params_flops(preset("wrn40_2"), "float")
        assert abs(f40["params"] - 2.25e6) / 2.25e6 < 0.02
        assert abs(f40["flops"] - 2.96e9) / 2.96e9 < 0.02

    def test_max_delay_ratio_in_reported_band(self):
        rows = delay_table(preset("resnet34"), HwParams())
        ratio = max(r["oat_over_float"] for r in rows)
        assert 1.41 <= ratio <= 1.91

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("resnet50")

    def test_delay_table_covers_all_convs(self):
        layers = preset("resnet34")
        rows = delay_table(layers, HwParams())
        assert len(rows) == sum(1 for l in layers if l.kind == "conv")
        for r in rows:
            assert r["oat_ns"] > r["conv_ns"]
            assert r["float_ns"] > r["conv_ns"]
