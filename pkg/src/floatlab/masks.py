"""Global-density pruning masks: random initialization, magnitude/F-norm
pruning, and momentum-ranked regrowth.

Granularities: ``irregular`` masks individual weights; ``channel`` masks whole
input-channel slices (theta[:, c] for conv and FC alike), and masks stay
channel-atomic at all times.  The global constraint is
sum_l nnz(theta_l * mask_l) <= density * sum_l size(theta_l), checked after
initialization and preserved exactly by every prune/regrow round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DimensionError
from .model import CondNet

GRANULARITIES = ("irregular", "channel")


@dataclass
class PruneMask:
    masks: dict[str, np.ndarray]
    granularity: str
    density_target: float
    achieved_density: float = 0.0

    def active(self) -> int:
        return int(sum(m.sum() for m in self.masks.values()))

    def total(self) -> int:
        return int(sum(m.size for m in self.masks.values()))

    def density(self) -> float:
        return self.active() / self.total()


def channel_scores(theta: np.ndarray) -> np.ndarray:
    """Squared Frobenius norm of each input-channel slice of a 4-D weight."""
    if theta.ndim != 4:
        raise DimensionError("channel_scores expects a 4-D conv weight")
    return np.einsum("ocij,ocij->c", theta, theta)


def _channel_axis_scores(arr: np.ndarray, op) -> np.ndarray:
    """Reduce everything but the input-channel axis (axis 1)."""
    axes = tuple(i for i in range(arr.ndim) if i != 1)
    return op(arr, axis=axes)


def init_mask(net: CondNet, density: float, granularity: str, seed: int) -> PruneMask:
    """Random mask with uniform per-layer density.

    Counts are floored, never below one weight (irregular) or one channel
    (channel) per layer.  If the per-layer floors overshoot the global budget,
    channels are trimmed from the most over-budget layers; the achieved
    density is recorded either way.
    """
    if not 0.0 < density <= 1.0:
        raise ConfigError(f"density must lie in (0, 1], got {density}")
    if granularity not in GRANULARITIES:
        raise ConfigError(f"granularity must be one of {GRANULARITIES}, got {granularity!r}")
    rng = rngmod.stream(seed, rngmod.MASK)
    masks: dict[str, np.ndarray] = {}
    for name, p in net.masked_parameters():
        arr = p.data
        mask = np.zeros(arr.shape, dtype=bool)
        if granularity == "irregular":
            n_keep = max(1, math.floor(density * arr.size))
            keep = rng.permutation(arr.size)[:n_keep]
            mask.reshape(-1)[keep] = True
        else:
            n_ch = arr.shape[1]
            n_keep = max(1, math.floor(density * n_ch))
            keep = rng.permutation(n_ch)[:n_keep]
            if arr.ndim == 4:
                mask[:, keep, :, :] = True
            else:
                mask[:, keep] = True
        masks[name] = mask
    out = PruneMask(masks, granularity, density)

    budget = math.floor(density * out.total())
    if granularity == "channel":
        # Min-one-channel floors can overshoot the global budget; trim whole
        # channels from the most over-dense layers while they have > 1 left.
        while out.active() > budget:
            over = [
                (masks[n].sum() / masks[n].size, n)
                for n, _ in net.masked_parameters()
                if _channel_axis_scores(masks[n], np.max).sum() > 1
            ]
            if not over:
                break
            _, name = max(over)
            m = masks[name]
            active_ch = np.flatnonzero(_channel_axis_scores(m, np.max))
            drop = active_ch[-1]
            if m.ndim == 4:
                m[:, drop, :, :] = False
            else:
                m[:, drop] = False
    out.achieved_density = out.density()
    return out


def apply_mask(net: CondNet, mask: PruneMask) -> None:
    """Zero every pruned weight and its momentum entry."""
    for name, p in net.masked_parameters():
        m = mask.masks.get(name)
        if m is None or m.shape != p.data.shape:
            raise DimensionError(f"mask for {name} missing or mis-shaped")
        p.data *= m
        p.momentum *= m


def sgd_masks(net: CondNet, mask: PruneMask | None):
    """Mask mapping keyed by parameter for the optimizer's gated update."""
    if mask is None:
        return None
    return {p: mask.masks[name] for name, p in net.masked_parameters()}


@dataclass
class LayerMomentumRank:
    """Normalized mean-absolute-momentum shares over active weights."""

    shares: dict[str, float] = field(default_factory=dict)


def layer_momentum_rank(net: CondNet, mask: PruneMask) -> LayerMomentumRank:
    raw: dict[str, float] = {}
    for name, p in net.masked_parameters():
        m = mask.masks[name]
        n_active = int(m.sum())
        raw[name] = float(np.abs(p.momentum[m]).sum() / n_active) if n_active else 0.0
    total = sum(raw.values())
    if total == 0.0:
        # No momentum signal yet: fall back to a uniform split.
        shares = {name: 1.0 / len(raw) for name in raw}
    else:
        shares = {name: v / total for name, v in raw.items()}
    return LayerMomentumRank(shares)


def prune_rate(epoch: int, total_epochs: int, initial_rate: float = 0.3) -> float:
    """Cosine decay of the per-round prune fraction from its initial value to 0."""
    if total_epochs < 1:
        raise ConfigError("total_epochs must be positive")
    return 0.5 * initial_rate * (1.0 + math.cos(math.pi * epoch / total_epochs))


def _stable_smallest(values: np.ndarray, n: int) -> np.ndarray:
    """Indices of the n smallest values; ties resolved to the lowest index."""
    return np.argsort(values, kind="stable")[:n]


def _stable_largest(values: np.ndarray, n: int) -> np.ndarray:
    return np.argsort(-values, kind="stable")[:n]


def prune_regrow(
    net: CondNet,
    mask: PruneMask,
    ranks: LayerMomentumRank,
    epoch: int,
    total_epochs: int,
    initial_rate: float = 0.3,
) -> dict:
    """One end-of-epoch prune/regrow round; the global non-zero count is
    conserved exactly.

    Irregular: each layer drops the p_t fraction of its active weights with
    smallest magnitude; the pooled budget is regrown across layers in
    proportion to their momentum shares (largest-remainder rounding), demand
    beyond a layer's inactive capacity spilling to the next-ranked layer.
    Regrowth inside a layer picks the inactive positions with largest
    momentum; regrown weights restart at value 0 and momentum 0.

    Channel: each layer drops its p_t fraction of active channels with the
    smallest squared-F-norm scores and regrows the same number of its own
    inactive channels ranked by momentum.  Cross-layer redistribution is not
    attempted because heterogeneous channel sizes cannot conserve the global
    weight count exactly.
    """
    p_t = prune_rate(epoch, total_epochs, initial_rate)
    params = dict(net.masked_parameters())
    pruned_total = 0

    if mask.granularity == "channel":
        regrown_total = 0
        for name, p in params.items():
            m = mask.masks[name]
            active_ch = np.flatnonzero(_channel_axis_scores(m, np.max))
            n_prune = min(math.floor(p_t * active_ch.size), active_ch.size - 1)
            if n_prune <= 0:
                continue
            if p.data.ndim == 4:
                scores = channel_scores(p.data)[active_ch]
            else:
                scores = _channel_axis_scores(p.data**2, np.sum)[active_ch]
            drop = active_ch[_stable_smallest(scores, n_prune)]
            grow_pool = np.flatnonzero(~_channel_axis_scores(m, np.max))
            mom = _channel_axis_scores(np.abs(p.momentum), np.sum)[grow_pool]
            grow = grow_pool[_stable_largest(mom, n_prune)]
            sl = (slice(None), drop) if p.data.ndim == 2 else (slice(None), drop, slice(None), slice(None))
            gl = (slice(None), grow) if p.data.ndim == 2 else (slice(None), grow, slice(None), slice(None))
            ch_size = p.data.size // p.data.shape[1]
            pruned_total += n_prune * ch_size
            regrown_total += grow.size * ch_size
            m[sl] = False
            p.data[sl] = 0
            p.momentum[sl] = 0
            m[gl] = True
            p.data[gl] = 0
            p.momentum[gl] = 0
        return {"pruned": pruned_total, "regrown": regrown_total, "rate": p_t}

    # irregular
    pruned_per_layer: dict[str, int] = {}
    for name, p in params.items():
        m = mask.masks[name]
        flat_m = m.reshape(-1)
        active = np.flatnonzero(flat_m)
        n_prune = min(math.floor(p_t * active.size), active.size - 1)
        pruned_per_layer[name] = max(n_prune, 0)
        if n_prune <= 0:
            continue
        magnitudes = np.abs(p.data.reshape(-1)[active])
        drop = active[_stable_smallest(magnitudes, n_prune)]
        flat_m[drop] = False
        p.data.reshape(-1)[drop] = 0
        p.momentum.reshape(-1)[drop] = 0
        pruned_total += n_prune

    budget = pruned_total
    names = list(params)
    shares = np.array([ranks.shares.get(n, 0.0) for n in names])
    if shares.sum() <= 0:
        shares = np.ones(len(names))
    shares = shares / shares.sum()
    ideal = budget * shares
    alloc = np.floor(ideal).astype(int)
    remainder = budget - alloc.sum()
    if remainder > 0:
        order = np.argsort(-(ideal - alloc), kind="stable")
        alloc[order[:remainder]] += 1

    # capacity clip, spill to next-ranked layer in descending-share order
    rank_order = list(np.argsort(-shares, kind="stable"))
    capacity = {n: int((~mask.masks[n]).sum()) for n in names}
    grow_plan = {n: 0 for n in names}
    spill = 0
    for i in rank_order:
        n = names[i]
        take = min(alloc[i], capacity[n])
        grow_plan[n] = take
        spill += alloc[i] - take
    for i in rank_order:
        if spill == 0:
            break
        n = names[i]
        extra = min(spill, capacity[n] - grow_plan[n])
        grow_plan[n] += extra
        spill -= extra
    if spill:
        raise ConfigError("regrowth budget exceeds total inactive capacity")

    regrown_total = 0
    for name, p in params.items():
        n_grow = grow_plan[name]
        if n_grow <= 0:
            continue
        m = mask.masks[name].reshape(-1)
        inactive = np.flatnonzero(~m)
        mom = np.abs(p.momentum.reshape(-1)[inactive])
        grow = inactive[_stable_largest(mom, n_grow)]
        m[grow] = True
        p.data.reshape(-1)[grow] = 0
        p.momentum.reshape(-1)[grow] = 0
        regrown_total += n_grow
    return {"pruned": pruned_total, "regrown": regrown_total, "rate": p_t}
