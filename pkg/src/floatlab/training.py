"""Training loops and evaluation: the half-clean/half-adversarial epoch, the
width-slimmed variant, and the (lambda_n, lambda_th) accuracy/robustness sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import rng as rngmod
from .attacks import AttackConfig, pgd_attack
from .autodiff import OptimizerConfig, Tensor, cosine_lr, sgd_step
from .conditioning import ConditionState, ForwardPlan, plan_attack_train, plan_eval
from .errors import ConfigError, DataError
from .masks import PruneMask, sgd_masks
from .model import CondNet


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 128
    attack: AttackConfig = field(default_factory=lambda: AttackConfig(random_start=True))
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError(f"batch_size must be even and >= 2, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")


def _iter_batches(n: int, batch_size: int, order: np.ndarray) -> Iterable[np.ndarray]:
    """Full batches plus an even-trimmed remainder (at most one sample dropped)."""
    for start in range(0, n - batch_size + 1, batch_size):
        yield order[start : start + batch_size]
    rem = n % batch_size
    if rem >= 2:
        tail = order[n - rem :]
        yield tail if rem % 2 == 0 else tail[:-1]


def _accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float((logits.argmax(axis=1) == labels).mean())


def _make_adversarial(
    net: CondNet,
    x: np.ndarray,
    labels: np.ndarray,
    attack: AttackConfig,
    rng: np.random.Generator,
    sf_index: int = 0,
) -> np.ndarray:
    """Perturb against the adversarial path (cached noise, frozen batch stats)."""
    plan = plan_attack_train(sf_index)
    return pgd_attack(lambda xt: net.forward(xt, plan), x, labels, attack, rng)


def _batch_losses(
    net: CondNet,
    xb: np.ndarray,
    yb: np.ndarray,
    attack: AttackConfig,
    rng_attack: np.random.Generator,
    sf_index: int = 0,
):
    """Half/half split: clean loss via the clean path, adversarial loss on
    attacked samples via the noisy path.  Fresh noise is drawn once for the
    batch and shared by the attack and the loss pass."""
    half = len(xb) // 2
    x_clean, y_clean = xb[:half], yb[:half]
    x_adv, y_adv = xb[half:], yb[half:]

    plan_clean = ForwardPlan(alpha_scale=0.0, bn_branch="clean", bn_mode="train", sf_index=sf_index)
    loss_c, logits_c = net.loss(x_clean, y_clean, plan_clean)

    net.resample_noise(sf_index)
    x_hat = _make_adversarial(net, x_adv, y_adv, attack, rng_attack, sf_index)
    plan_adv = ForwardPlan(alpha_scale=1.0, bn_branch="adv", bn_mode="train", sf_index=sf_index)
    loss_a, logits_a = net.loss(x_hat, y_adv, plan_adv)
    return loss_c, loss_a, _accuracy(logits_c.data, y_clean), _accuracy(logits_a.data, y_adv)


def float_epoch(
    net: CondNet,
    images: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    epoch: int,
    mask: PruneMask | None = None,
    rng_data: np.random.Generator | None = None,
    rng_attack: np.random.Generator | None = None,
) -> dict:
    """One epoch of conditional training: L = 0.5 * L_clean + 0.5 * L_adv per
    batch, one masked optimizer step per batch."""
    n = len(images)
    if n == 0:
        raise DataError("empty training stream")
    rng_data = rng_data or rngmod.stream(cfg.seed, rngmod.DATA_ORDER)
    rng_attack = rng_attack or rngmod.stream(cfg.seed, rngmod.ATTACK)
    order = rng_data.permutation(n)
    lr_t = cosine_lr(epoch, cfg.optimizer)
    masks = sgd_masks(net, mask)
    params = net.parameters()

    totals = {"loss_clean": 0.0, "loss_adv": 0.0, "acc_clean": 0.0, "acc_adv": 0.0}
    batches = 0
    for idx in _iter_batches(n, cfg.batch_size, order):
        xb, yb = images[idx], labels[idx]
        loss_c, loss_a, acc_c, acc_a = _batch_losses(net, xb, yb, cfg.attack, rng_attack)
        loss = 0.5 * loss_c + 0.5 * loss_a
        net.zero_grad()
        loss.backward()
        sgd_step(params, cfg.optimizer, lr_t, masks)
        totals["loss_clean"] += float(loss_c.data)
        totals["loss_adv"] += float(loss_a.data)
        totals["acc_clean"] += acc_c
        totals["acc_adv"] += acc_a
        batches += 1
    if batches == 0:
        raise DataError(f"dataset of {n} samples yields no even batch of size {cfg.batch_size}")
    return {k: v / batches for k, v in totals.items()} | {"batches": batches, "lr": lr_t}


def slim_step(
    net: CondNet,
    xb: np.ndarray,
    yb: np.ndarray,
    cfg: TrainConfig,
    mask: PruneMask | None,
    rng_attack: np.random.Generator,
    lr_t: float,
) -> dict:
    """One batch of slimmable training: losses from every width (descending),
    each attacked against its own sub-network, then a single optimizer step on
    the accumulated gradients."""
    net.zero_grad()
    metrics = {}
    total: Tensor | None = None
    for sf_index in reversed(range(len(net.slim_factors))):
        loss_c, loss_a, acc_c, acc_a = _batch_losses(net, xb, yb, cfg.attack, rng_attack, sf_index)
        loss_w = 0.5 * loss_c + 0.5 * loss_a
        total = loss_w if total is None else total + loss_w
        f = net.slim_factors[sf_index]
        metrics[f] = {"loss_clean": float(loss_c.data), "loss_adv": float(loss_a.data),
                      "acc_clean": acc_c, "acc_adv": acc_a}
    total.backward()
    sgd_step(net.parameters(), cfg.optimizer, lr_t, sgd_masks(net, mask))
    return metrics


def slim_epoch(
    net: CondNet,
    images: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    epoch: int,
    mask: PruneMask | None = None,
    rng_data: np.random.Generator | None = None,
    rng_attack: np.random.Generator | None = None,
) -> dict:
    n = len(images)
    if n == 0:
        raise DataError("empty training stream")
    rng_data = rng_data or rngmod.stream(cfg.seed, rngmod.DATA_ORDER)
    rng_attack = rng_attack or rngmod.stream(cfg.seed, rngmod.ATTACK)
    order = rng_data.permutation(n)
    lr_t = cosine_lr(epoch, cfg.optimizer)
    agg: dict[float, dict] = {f: {"loss_clean": 0.0, "loss_adv": 0.0, "acc_clean": 0.0, "acc_adv": 0.0}
                              for f in net.slim_factors}
    batches = 0
    for idx in _iter_batches(n, cfg.batch_size, order):
        per_sf = slim_step(net, images[idx], labels[idx], cfg, mask, rng_attack, lr_t)
        for f, m in per_sf.items():
            for k in agg[f]:
                agg[f][k] += m[k]
        batches += 1
    if batches == 0:
        raise DataError(f"dataset of {n} samples yields no even batch of size {cfg.batch_size}")
    out = {f: {k: v / batches for k, v in d.items()} for f, d in agg.items()}
    full = out[1.0]
    return {**full, "per_factor": out, "batches": batches, "lr": lr_t}


def evaluate(
    net: CondNet,
    images: np.ndarray,
    labels: np.ndarray,
    lambda_n_set: Sequence[float],
    lambda_th: float,
    attack: AttackConfig | None,
    seed: int = 0,
    slim_factor: float = 1.0,
    batch_size: int = 250,
) -> list[dict]:
    """Clean and robust accuracy for each lambda_n.

    Noise is drawn once per evaluation run from the given seed, so repeated
    calls with the same (model, seed) agree bit for bit.  The attack targets
    the deployed configuration (rescaled alpha, selected BN, eval-mode stats).
    """
    if len(images) == 0:
        raise DataError("empty evaluation dataset")
    if not lambda_n_set:
        raise ConfigError("lambda_n_set must not be empty")
    if attack is not None and attack.random_start:
        attack = replace(attack, random_start=False)
    sf_index = net.sf_index(slim_factor)
    net.reseed_noise(seed, rngmod.EVAL_NOISE)
    net.resample_noise(sf_index)
    rows = []
    for lambda_n in lambda_n_set:
        state = ConditionState(lambda_n=float(lambda_n), lambda_th=lambda_th)
        plan = plan_eval(state, sf_index)
        correct_clean = 0
        correct_adv = 0
        n = len(images)
        for start in range(0, n, batch_size):
            xb = images[start : start + batch_size]
            yb = labels[start : start + batch_size]
            logits = net.forward(xb, plan)
            correct_clean += int((logits.data.argmax(axis=1) == yb).sum())
            if attack is not None:
                forward = lambda xt: net.forward(xt, plan)
                x_hat = pgd_attack(forward, xb, yb, attack, None)
                logits_a = net.forward(x_hat, plan)
                correct_adv += int((logits_a.data.argmax(axis=1) == yb).sum())
        row = {
            "lambda_n": float(lambda_n),
            "lambda_th": float(lambda_th),
            "ca": 100.0 * correct_clean / n,
            "ra": (100.0 * correct_adv / n) if attack is not None else None,
            "slim_factor": slim_factor,
        }
        rows.append(row)
    return rows
