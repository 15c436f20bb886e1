import numpy as np
import pytest

from floatlab.autodiff import Parameter
from floatlab.errors import ConfigError
from floatlab.masks import (
    LayerMomentumRank,
    PruneMask,
    apply_mask,
    channel_scores,
    init_mask,
    layer_momentum_rank,
    prune_rate,
    prune_regrow,
)

from conftest import tiny_net


class FakeNet:
    """Duck-typed stand-in exposing exactly the masked-parameter surface."""

    def __init__(self, shapes):
        self._params = [
            (name, Parameter(np.random.default_rng(i).standard_normal(shape), role="conv_weight"))
            for i, (name, shape) in enumerate(shapes)
        ]

    def masked_parameters(self):
        return list(self._params)


def channel_atomic(mask):
    for m in mask.masks.values():
        axes = tuple(i for i in range(m.ndim) if i != 1)
        per_channel = m.sum(axis=axes)
        full = m.size // m.shape[1]
        assert set(np.unique(per_channel)) <= {0, full}


class TestChannelScores:
    def test_sum_of_squares_oracle(self):
        theta = np.zeros((2, 2, 1, 1))
        theta[0, 0], theta[1, 0] = 1.0, 2.0
        theta[0, 1], theta[1, 1] = 3.0, 0.0
        np.testing.assert_allclose(channel_scores(theta), [5.0, 9.0])

    def test_zero_channel_scores_zero(self, rng):
        theta = rng.standard_normal((3, 4, 2, 2))
        theta[:, 2] = 0.0
        scores = channel_scores(theta)
        assert scores[2] == 0.0
        assert np.argsort(scores)[0] == 2

    def test_homogeneity(self, rng):
        theta = rng.standard_normal((3, 4, 2, 2))
        base = channel_scores(theta)
        np.testing.assert_allclose(channel_scores(2.5 * theta), 2.5**2 * base, rtol=1e-12)
        assert (np.argsort(base) == np.argsort(channel_scores(2.5 * theta))).all()


class TestInitMask:
    def test_full_density_is_all_ones(self):
        net = FakeNet([("a", (8, 4, 2, 2)), ("b", (3, 8, 1, 1))])
        mask = init_mask(net, 1.0, "irregular", seed=0)
        assert all(m.all() for m in mask.masks.values())
        assert mask.achieved_density == 1.0

    def test_uniform_per_layer_arithmetic(self):
        net = FakeNet([("a", (80, 1, 1, 1)), ("b", (20, 1, 1, 1))])
        mask = init_mask(net, 0.5, "irregular", seed=1)
        assert mask.masks["a"].sum() == 40
        assert mask.masks["b"].sum() == 10

    def test_channel_floor_keeps_one_channel(self):
        net = FakeNet([("a", (2, 4, 1, 1))])
        mask = init_mask(net, 0.3, "channel", seed=2)
        active_channels = mask.masks["a"].any(axis=(0, 2, 3)).sum()
        assert active_channels == 1
        channel_atomic(mask)

    def test_min_one_weight_floor_reported(self):
        net = FakeNet([("a", (3, 1, 1, 1)), ("b", (1000, 1, 1, 1))])
        mask = init_mask(net, 0.01, "irregular", seed=3)
        assert mask.masks["a"].sum() == 1  # floor(0.03) -> 1
        assert mask.masks["b"].sum() == 10
        assert mask.achieved_density == pytest.approx(11 / 1003)

    def test_global_budget_respected_when_floors_allow(self):
        net = FakeNet([("a", (4, 2, 3, 3)), ("b", (8, 6, 3, 3)), ("c", (2, 10, 1, 1))])
        for d in (0.1, 0.3, 0.5, 0.9):
            for granularity in ("irregular", "channel"):
                mask = init_mask(net, d, granularity, seed=4)
                if granularity == "irregular":
                    floor_min = len(mask.masks)  # one weight per layer
                else:
                    floor_min = sum(m.size // m.shape[1] for m in mask.masks.values())
                budget = int(d * mask.total())
                if floor_min <= budget:
                    assert mask.active() <= budget
                else:
                    # minimum-floor regime: the achieved density is reported
                    assert mask.achieved_density == pytest.approx(mask.density())
                    assert mask.achieved_density > d

    def test_bad_density_rejected(self):
        net = FakeNet([("a", (2, 2, 1, 1))])
        for d in (0.0, -0.5, 1.5):
            with pytest.raises(ConfigError):
                init_mask(net, d, "irregular", seed=0)
        with pytest.raises(ConfigError):
            init_mask(net, 0.5, "diagonal", seed=0)


class TestApplyMask:
    def test_identity_mask_keeps_model(self):
        net = tiny_net(dtype=np.float64)
        before = [p.data.copy() for _, p in net.masked_parameters()]
        mask = init_mask(net, 1.0, "irregular", seed=0)
        apply_mask(net, mask)
        for (_, p), b in zip(net.masked_parameters(), before):
            np.testing.assert_array_equal(p.data, b)

    def test_half_density_zeroes_and_counts(self):
        net = FakeNet([("a", (100, 1, 1, 1))])
        mask = init_mask(net, 0.5, "irregular", seed=5)
        p = net.masked_parameters()[0][1]
        p.momentum[:] = 1.0
        apply_mask(net, mask)
        assert np.count_nonzero(p.data) <= 50
        assert np.count_nonzero(p.momentum) <= 50
        np.testing.assert_array_equal(p.momentum == 0, ~mask.masks["a"])

    def test_channel_mask_zeroes_whole_channels(self):
        net = FakeNet([("a", (4, 6, 2, 2))])
        mask = init_mask(net, 0.5, "channel", seed=6)
        apply_mask(net, mask)
        p = net.masked_parameters()[0][1]
        for c in range(6):
            if not mask.masks["a"][:, c].any():
                assert (p.data[:, c] == 0).all()


class TestMomentumRank:
    def test_shares_sum_to_one(self):
        net = FakeNet([("a", (10, 2, 1, 1)), ("b", (5, 2, 1, 1))])
        mask = init_mask(net, 1.0, "irregular", seed=0)
        for _, p in net.masked_parameters():
            p.momentum[:] = np.random.default_rng(0).random(p.momentum.shape)
        ranks = layer_momentum_rank(net, mask)
        assert sum(ranks.shares.values()) == pytest.approx(1.0, abs=1e-9)

    def test_zero_active_layer_scores_zero(self):
        net = FakeNet([("a", (10, 1, 1, 1)), ("b", (10, 1, 1, 1))])
        mask = init_mask(net, 1.0, "irregular", seed=0)
        mask.masks["a"][:] = False
        for _, p in net.masked_parameters():
            p.momentum[:] = 1.0
        ranks = layer_momentum_rank(net, mask)
        assert ranks.shares["a"] == 0.0
        assert ranks.shares["b"] == 1.0


class TestPruneRegrow:
    def _net_with_momenta(self, mean_a=0.75, mean_b=0.25):
        net = FakeNet([("a", (20, 20, 1, 1)), ("b", (20, 20, 1, 1))])
        mask = init_mask(net, 0.5, "irregular", seed=7)
        apply_mask(net, mask)
        params = dict(net.masked_parameters())
        params["a"].momentum[:] = mean_a
        params["b"].momentum[:] = mean_b
        # keep dormant entries' momentum at zero so regrowth is index-ranked
        params["a"].momentum *= mask.masks["a"]
        params["b"].momentum *= mask.masks["b"]
        return net, mask

    def test_zero_rate_is_noop(self):
        net, mask = self._net_with_momenta()
        before = {n: m.copy() for n, m in mask.masks.items()}
        ranks = layer_momentum_rank(net, mask)
        stats = prune_regrow(net, mask, ranks, epoch=10, total_epochs=10, initial_rate=0.3)
        assert stats["pruned"] == stats["regrown"] == 0
        for n, m in mask.masks.items():
            np.testing.assert_array_equal(m, before[n])

    def test_budget_conserved_exactly(self):
        net, mask = self._net_with_momenta()
        active_before = mask.active()
        ranks = layer_momentum_rank(net, mask)
        stats = prune_regrow(net, mask, ranks, epoch=0, total_epochs=10, initial_rate=0.3)
        assert stats["pruned"] == stats["regrown"] > 0
        assert mask.active() == active_before

    def test_proportional_allocation_oracle(self):
        """Shares 0.75/0.25 and a budget of 8 regrow 6 and 2 entries."""
        net, mask = self._net_with_momenta(0.75, 0.25)
        ranks = layer_momentum_rank(net, mask)
        assert ranks.shares["a"] == pytest.approx(0.75)
        assert ranks.shares["b"] == pytest.approx(0.25)
        active_a = int(mask.masks["a"].sum())
        # initial_rate chosen so each layer prunes 4: floor(p * 200) = 4
        rate = 2 * (4 / active_a)
        before_a, before_b = mask.masks["a"].sum(), mask.masks["b"].sum()
        prune_regrow(net, mask, ranks, epoch=5, total_epochs=10, initial_rate=rate)
        # pruned 4 each; regrow 6 into a, 2 into b
        assert mask.masks["a"].sum() == before_a - 4 + 6
        assert mask.masks["b"].sum() == before_b - 4 + 2

    def test_spillover_to_next_ranked_layer(self):
        net = FakeNet([("a", (10, 10, 1, 1)), ("b", (10, 10, 1, 1))])
        mask = init_mask(net, 0.97, "irregular", seed=8)  # a: 97 active, 3 dormant
        apply_mask(net, mask)
        params = dict(net.masked_parameters())
        params["a"].momentum[:] = 1.0  # all budget wants layer a
        params["b"].momentum[:] = 0.0
        params["a"].momentum *= mask.masks["a"]
        ranks = layer_momentum_rank(net, mask)
        active_before = mask.active()
        # prune ~9 from each layer: demand 18 for layer a, capacity is 3 + 9 pruned = 12
        prune_regrow(net, mask, ranks, epoch=0, total_epochs=10, initial_rate=0.1856)
        assert mask.active() == active_before  # spill absorbed by layer b

    def test_regrown_entries_start_at_zero(self):
        net, mask = self._net_with_momenta()
        params = dict(net.masked_parameters())
        ranks = layer_momentum_rank(net, mask)
        prune_regrow(net, mask, ranks, epoch=0, total_epochs=10, initial_rate=0.3)
        for name, p in params.items():
            m = mask.masks[name]
            np.testing.assert_array_equal(p.data[~m], 0.0)
            np.testing.assert_array_equal(p.momentum[~m], 0.0)
            # every active-but-zero weight has zero momentum (it was just regrown)
            regrown = m & (p.data == 0.0)
            np.testing.assert_array_equal(p.momentum[regrown], 0.0)

    def test_channel_mode_prunes_lowest_fnorm_and_stays_atomic(self):
        net = FakeNet([("a", (6, 8, 2, 2))])
        mask = init_mask(net, 0.75, "channel", seed=9)
        apply_mask(net, mask)
        p = dict(net.masked_parameters())["a"]
        active = np.flatnonzero(mask.masks["a"].any(axis=(0, 2, 3)))
        scores = channel_scores(p.data)
        weakest = active[np.argsort(scores[active], kind="stable")[0]]
        ranks = layer_momentum_rank(net, mask)
        before = mask.active()
        prune_regrow(net, mask, ranks, epoch=0, total_epochs=4, initial_rate=0.4)
        assert not mask.masks["a"][:, weakest].any()
        assert mask.active() == before
        channel_atomic(mask)

    def test_rate_schedule_decays_from_initial_to_zero(self):
        assert prune_rate(0, 10, 0.3) == 0.3
        assert prune_rate(10, 10, 0.3) == 0.0
        vals = [prune_rate(e, 10, 0.3) for e in range(11)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
