"""Experiment orchestration: training runs, checkpointing, metrics CSVs, and
trade-off sweeps.

Every emitted byte is a function of (config, seed): run ids are config
hashes, CSV floats use fixed formats, and wall-clock measurement is off by
default so identical runs produce identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import re
import time
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .attacks import AttackConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import load_dataset
from .errors import ConfigError, FloatLabError
from .masks import PruneMask, apply_mask, init_mask, layer_momentum_rank, prune_regrow
from .model import ArchConfig, CondNet
from .training import TrainConfig, evaluate, float_epoch, slim_epoch

METRICS_HEADER = [
    "run_id",
    "epoch",
    "lambda_n",
    "lambda_th",
    "ca_percent",
    "ra_percent",
    "attack_name",
    "density",
    "slim_factor",
    "params",
    "wall_ms",
]


def run_id_for(cfg: ExperimentConfig) -> str:
    canon = json.dumps(cfg.model_dump(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _fmt(value, spec: str = "") -> str:
    if value is None:
        return ""
    if spec:
        return format(value, spec)
    return str(value)


class MetricsWriter:
    """Append-only CSV with a fixed header row and fixed float formats."""

    def __init__(self, path: str):
        self.path = path
        if not os.path.exists(path):
            with open(path, "w", newline="") as f:
                csv.writer(f).writerow(METRICS_HEADER)

    def append(self, *, run_id, epoch, lambda_n=None, lambda_th=None, ca=None, ra=None,
               attack_name="", density=None, slim_factor=None, params=None, wall_ms=0):
        row = [
            run_id,
            epoch,
            _fmt(lambda_n),
            _fmt(lambda_th),
            _fmt(ca, ".4f"),
            _fmt(ra, ".4f"),
            attack_name,
            _fmt(density, ".6f"),
            _fmt(slim_factor),
            _fmt(params),
            wall_ms,
        ]
        with open(self.path, "a", newline="") as f:
            csv.writer(f).writerow(row)


def _stage(name: str):
    """Decorator tagging FloatLabError with the pipeline stage that raised it."""

    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except FloatLabError as e:
                if not getattr(e, "stage", None):
                    e.stage = name
                raise

        return inner

    return wrap


@dataclass
class RunResult:
    run_id: str
    checkpoint_path: str
    metrics_path: str
    epochs: int
    density: float | None
    history: list[dict] = field(default_factory=list)


@_stage("train")
def run(cfg: ExperimentConfig) -> RunResult:
    """Train per the config: write a checkpoint every epoch and one metrics
    row per epoch; fully reproducible from (config, seed)."""
    run_id = run_id_for(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)

    train_ds = _load(cfg.data.train)
    if cfg.train.batch_size > 2 * len(train_ds):
        raise ConfigError(
            f"batch_size {cfg.train.batch_size} too large for {len(train_ds)} training samples"
        )

    slim_factors = tuple(sorted(cfg.slim.factors)) if cfg.slim else (1.0,)
    net = CondNet(
        ArchConfig(
            channels=tuple(cfg.model.channels),
            kernel=cfg.model.kernel,
            strides=tuple(cfg.model.strides),
            padding=cfg.model.padding,
        ),
        in_channels=train_ds.images.shape[1],
        n_classes=train_ds.n_classes,
        seed=cfg.seed,
        slim_factors=slim_factors,
    )

    mask: PruneMask | None = None
    if cfg.prune is not None:
        mask = init_mask(net, cfg.prune.density, cfg.prune.granularity, cfg.seed)
        apply_mask(net, mask)

    train_cfg = TrainConfig(
        epochs=cfg.train.epochs,
        batch_size=cfg.train.batch_size,
        attack=cfg.train.attack.build(),
        optimizer=cfg.train.optimizer.build(cfg.train.epochs),
        seed=cfg.seed,
    )

    metrics = MetricsWriter(os.path.join(cfg.out_dir, "metrics.csv"))
    ckpt_path = os.path.join(cfg.out_dir, "checkpoint.flc")
    rng_data = rngmod.stream(cfg.seed, rngmod.DATA_ORDER)
    rng_attack = rngmod.stream(cfg.seed, rngmod.ATTACK)

    epoch_fn = slim_epoch if cfg.mode == "floats_slim" else float_epoch
    history = []
    extra = {"mode": cfg.mode, "run_id": run_id, "epoch": 0}
    save_checkpoint(ckpt_path, net, mask, extra)
    for epoch in range(cfg.train.epochs):
        t0 = time.perf_counter()
        stats = epoch_fn(net, train_ds.images, train_ds.labels, train_cfg, epoch, mask, rng_data, rng_attack)
        if mask is not None:
            ranks = layer_momentum_rank(net, mask)
            prune_regrow(net, mask, ranks, epoch, cfg.train.epochs, cfg.prune.prune_rate)
        wall_ms = int(1000 * (time.perf_counter() - t0)) if cfg.record_walltime else 0
        extra = {"mode": cfg.mode, "run_id": run_id, "epoch": epoch + 1}
        save_checkpoint(ckpt_path, net, mask, extra)
        metrics.append(
            run_id=run_id,
            epoch=epoch + 1,
            ca=100.0 * stats["acc_clean"],
            ra=100.0 * stats["acc_adv"],
            attack_name=train_cfg.attack.name,
            density=mask.density() if mask else None,
            slim_factor=1.0 if cfg.mode == "floats_slim" else None,
            params=net.active_param_count(mask.masks if mask else None),
            wall_ms=wall_ms,
        )
        history.append({"epoch": epoch + 1, **{k: stats[k] for k in ("loss_clean", "loss_adv", "acc_clean", "acc_adv", "lr")}})
    return RunResult(
        run_id=run_id,
        checkpoint_path=ckpt_path,
        metrics_path=metrics.path,
        epochs=cfg.train.epochs,
        density=mask.density() if mask else None,
        history=history,
    )


@_stage("load-dataset")
def _load(path: str):
    if not os.path.exists(path):
        raise ConfigError(f"dataset file not found: {path}")
    return load_dataset(path)


_ATTACK_RE = re.compile(r"^pgd(\d+)$")


def parse_attack_name(name: str, epsilon: float, step_size: float) -> AttackConfig | None:
    """Evaluation attack from its name: pgd<k>, fgsm, or none."""
    if name == "none":
        return None
    if name == "fgsm":
        return AttackConfig(epsilon, 1, max(step_size, epsilon), random_start=False)
    m = _ATTACK_RE.match(name)
    if not m:
        raise ConfigError(f"unknown attack name {name!r} (expected pgd<k>, fgsm, or none)")
    steps = int(m.group(1))
    if steps < 1:
        raise ConfigError("pgd attack needs at least one step")
    return AttackConfig(epsilon, steps, step_size, random_start=False)


@_stage("sweep")
def sweep(
    checkpoint_path: str,
    dataset_path: str,
    lambda_n_set: list[float],
    lambda_th: float,
    attacks: list[str],
    out_dir: str,
    epsilon: float = 0.1,
    step_size: float = 0.033,
    slim_factor: float = 1.0,
    seed: int | None = None,
) -> list[dict]:
    """Evaluate the trade-off grid and emit both the full metrics rows and a
    plot-ready (lambda_n, CA, RA) CSV per attack."""
    if not lambda_n_set:
        raise ConfigError("lambda_n_set must not be empty")
    if lambda_th not in (0.0, 0.5):
        raise ConfigError("lambda_th must be 0.0 or 0.5")
    if not attacks:
        raise ConfigError("need at least one attack name")
    if not os.path.exists(checkpoint_path):
        raise ConfigError(f"checkpoint not found: {checkpoint_path}")
    net, mask, meta = load_checkpoint(checkpoint_path)
    ds = _load(dataset_path)
    if seed is None:
        seed = net.seed
    os.makedirs(out_dir, exist_ok=True)
    run_id = meta.get("extra", {}).get("run_id", "sweep")
    metrics = MetricsWriter(os.path.join(out_dir, "sweep_metrics.csv"))
    params = net.active_param_count(mask.masks if mask else None, net.sf_index(slim_factor))

    all_rows = []
    tradeoff_path = os.path.join(out_dir, "tradeoff.csv")
    with open(tradeoff_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["attack_name", "lambda_n", "ca_percent", "ra_percent"])
        for attack_name in attacks:
            attack = parse_attack_name(attack_name, epsilon, step_size)
            rows = evaluate(
                net, ds.images, ds.labels, lambda_n_set, lambda_th, attack,
                seed=seed, slim_factor=slim_factor,
            )
            for r in rows:
                metrics.append(
                    run_id=run_id,
                    epoch=meta.get("extra", {}).get("epoch", 0),
                    lambda_n=r["lambda_n"],
                    lambda_th=r["lambda_th"],
                    ca=r["ca"],
                    ra=r["ra"],
                    attack_name=attack_name,
                    density=mask.density() if mask else None,
                    slim_factor=slim_factor,
                    params=params,
                )
                w.writerow(
                    [attack_name, _fmt(r["lambda_n"]), _fmt(r["ca"], ".4f"), _fmt(r["ra"], ".4f")]
                )
                all_rows.append({**r, "attack_name": attack_name, "params": params})
    return all_rows


@_stage("eval")
def eval_checkpoint(
    checkpoint_path: str,
    dataset_path: str,
    lambda_n: float,
    lambda_th: float,
    attack_name: str = "pgd7",
    epsilon: float = 0.1,
    step_size: float = 0.033,
    slim_factor: float = 1.0,
    seed: int | None = None,
) -> dict:
    if not os.path.exists(checkpoint_path):
        raise ConfigError(f"checkpoint not found: {checkpoint_path}")
    net, mask, meta = load_checkpoint(checkpoint_path)
    ds = _load(dataset_path)
    attack = parse_attack_name(attack_name, epsilon, step_size)
    rows = evaluate(
        net, ds.images, ds.labels, [lambda_n], lambda_th, attack,
        seed=net.seed if seed is None else seed, slim_factor=slim_factor,
    )
    row = rows[0]
    row["attack_name"] = attack_name
    row["params"] = net.active_param_count(mask.masks if mask else None, net.sf_index(slim_factor))
    return row


@_stage("inspect")
def inspect_checkpoint(checkpoint_path: str) -> dict:
    if not os.path.exists(checkpoint_path):
        raise ConfigError(f"checkpoint not found: {checkpoint_path}")
    net, mask, meta = load_checkpoint(checkpoint_path)
    layers = []
    for name, p in net.masked_parameters():
        m = mask.masks[name] if mask else None
        active = int(m.sum()) if m is not None else p.data.size
        w = dict(net.noisy_weights())[name]
        layers.append(
            {
                "name": name,
                "shape": list(p.data.shape),
                "weights": p.data.size,
                "active": active,
                "density": active / p.data.size,
                "alpha": float(w.alpha.data),
                "nonzero": int(np.count_nonzero(p.data)),
            }
        )
    total = sum(l["weights"] for l in layers)
    active = sum(l["active"] for l in layers)
    return {
        "mode": meta.get("extra", {}).get("mode"),
        "run_id": meta.get("extra", {}).get("run_id"),
        "epoch": meta.get("extra", {}).get("epoch"),
        "seed": net.seed,
        "slim_factors": list(net.slim_factors),
        "n_classes": net.n_classes,
        "mask": meta.get("mask"),
        "layers": layers,
        "total_weights": total,
        "active_weights": active,
        "density": active / total,
        "bn_batches": meta.get("bn_batches"),
    }
