import numpy as np
import pytest

import floatlab.rng as R
from floatlab.attacks import AttackConfig
from floatlab.autodiff import OptimizerConfig
from floatlab.checkpoint import load_checkpoint, save_checkpoint
from floatlab.conditioning import ConditionState, plan_eval
from floatlab.data import make_synthetic
from floatlab.errors import DataError
from floatlab.masks import apply_mask, init_mask
from floatlab.training import TrainConfig, float_epoch

from conftest import tiny_net


def trained_net(seed=3, with_mask=False, slim=(1.0,)):
    net = tiny_net(seed=seed, dtype=np.float32, channels=(6, 8), strides=(1, 2), slim_factors=slim)
    mask = None
    if with_mask:
        mask = init_mask(net, 0.5, "irregular", seed=seed)
        apply_mask(net, mask)
    ds = make_synthetic(3, 24, 1, 8, 8, seed=9)
    cfg = TrainConfig(
        epochs=1, batch_size=24,
        attack=AttackConfig(epsilon=0.05, steps=2, step_size=0.03, random_start=True),
        optimizer=OptimizerConfig(learning_rate=0.05, total_epochs=1), seed=seed,
    )
    float_epoch(net, ds.images, ds.labels, cfg, 0, mask,
                R.stream(seed, R.DATA_ORDER), R.stream(seed, R.ATTACK))
    return net, mask, ds


class TestRoundTrip:
    def test_forward_outputs_bitwise_identical(self, tmp_path):
        net, mask, ds = trained_net()
        path = tmp_path / "m.flc"
        save_checkpoint(str(path), net, mask, {"mode": "float", "run_id": "x", "epoch": 1})
        net2, mask2, meta = load_checkpoint(str(path))
        plan = plan_eval(ConditionState(lambda_n=0.0, lambda_th=0.0))
        a = net.forward(ds.images[:8], plan)
        b = net2.forward(ds.images[:8], plan)
        np.testing.assert_array_equal(a.data, b.data)
        assert meta["extra"]["epoch"] == 1

    def test_noisy_path_reproduced_including_rng_state(self, tmp_path):
        net, _, ds = trained_net(seed=5)
        path = tmp_path / "m.flc"
        save_checkpoint(str(path), net)
        net2, _, _ = load_checkpoint(str(path))
        # future draws from the stored stream state must agree
        net.resample_noise()
        net2.resample_noise()
        plan = plan_eval(ConditionState(lambda_n=1.0, lambda_th=0.0))
        a = net.forward(ds.images[:8], plan)
        b = net2.forward(ds.images[:8], plan)
        np.testing.assert_array_equal(a.data, b.data)

    def test_mask_and_momentum_round_trip(self, tmp_path):
        net, mask, _ = trained_net(seed=7, with_mask=True)
        path = tmp_path / "m.flc"
        save_checkpoint(str(path), net, mask, {"mode": "floats_i"})
        net2, mask2, _ = load_checkpoint(str(path))
        assert mask2 is not None
        assert mask2.granularity == "irregular"
        assert mask2.density_target == 0.5
        for name, m in mask.masks.items():
            np.testing.assert_array_equal(m, mask2.masks[name])
        for p, q in zip(net.parameters(), net2.parameters()):
            np.testing.assert_array_equal(p.data, q.data)
            np.testing.assert_array_equal(p.momentum, q.momentum)

    def test_resave_is_byte_identical(self, tmp_path):
        net, mask, _ = trained_net(seed=11, with_mask=True)
        p1, p2 = tmp_path / "a.flc", tmp_path / "b.flc"
        save_checkpoint(str(p1), net, mask, {"mode": "floats_i", "run_id": "r", "epoch": 1})
        net2, mask2, _ = load_checkpoint(str(p1))
        save_checkpoint(str(p2), net2, mask2, {"mode": "floats_i", "run_id": "r", "epoch": 1})
        assert p1.read_bytes() == p2.read_bytes()

    def test_slim_bn_sets_round_trip(self, tmp_path):
        net, _, ds = trained_net(seed=13, slim=(0.5, 1.0))
        path = tmp_path / "m.flc"
        save_checkpoint(str(path), net)
        net2, _, _ = load_checkpoint(str(path))
        assert net2.slim_factors == (0.5, 1.0)
        for b1, b2 in zip(net.blocks, net2.blocks):
            for d1, d2 in zip(b1.bns, b2.bns):
                np.testing.assert_array_equal(d1.stats_adv.running_mean, d2.stats_adv.running_mean)
                assert d1.stats_adv.batches == d2.stats_adv.batches


class TestValidation:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.flc"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(DataError, match="bad-magic"):
            load_checkpoint(str(path))

    def test_truncated(self, tmp_path):
        net, _, _ = trained_net(seed=17)
        path = tmp_path / "t.flc"
        save_checkpoint(str(path), net)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 10])
        with pytest.raises(DataError, match="truncated-payload"):
            load_checkpoint(str(path))

    def test_trailing_bytes(self, tmp_path):
        net, _, _ = trained_net(seed=19)
        path = tmp_path / "t.flc"
        save_checkpoint(str(path), net)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(DataError, match="trailing-bytes"):
            load_checkpoint(str(path))
