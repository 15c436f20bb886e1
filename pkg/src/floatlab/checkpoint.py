"""Self-describing binary checkpoint container.

Layout (little-endian): magic b"FLTC", u16 version, u32 metadata length,
UTF-8 JSON metadata, then raw array payloads in the order the metadata lists
them.  Weights and statistics are stored as exact raw bytes (bit-for-bit
round-trip); masks are stored as packed bitsets.  Metadata carries the model
geometry, run bookkeeping, and RNG states, so a load reproduces forward
outputs exactly.
"""

from __future__ import annotations

import json
import struct
from typing import Any

import numpy as np

from .errors import DataError
from .masks import PruneMask
from .model import ArchConfig, CondNet

MAGIC = b"FLTC"
VERSION = 1
_HEAD = struct.Struct("<4sHI")


def _array_entries(net: CondNet) -> list[tuple[str, np.ndarray]]:
    out: list[tuple[str, np.ndarray]] = []
    for i, block in enumerate(net.blocks):
        p = f"conv{i}"
        out.append((f"{p}.theta", block.weight.theta.data))
        out.append((f"{p}.theta_momentum", block.weight.theta.momentum))
        out.append((f"{p}.alpha", block.weight.alpha.data))
        out.append((f"{p}.alpha_momentum", block.weight.alpha.momentum))
        for j, dbn in enumerate(block.bns):
            q = f"{p}.bn{j}"
            for branch in ("clean", "adv"):
                stats, gamma, beta = dbn.branch(branch)
                out.append((f"{q}.{branch}.gamma", gamma.data))
                out.append((f"{q}.{branch}.gamma_momentum", gamma.momentum))
                out.append((f"{q}.{branch}.beta", beta.data))
                out.append((f"{q}.{branch}.beta_momentum", beta.momentum))
                out.append((f"{q}.{branch}.running_mean", stats.running_mean))
                out.append((f"{q}.{branch}.running_var", stats.running_var))
    out.append(("fc.theta", net.fc.weight.theta.data))
    out.append(("fc.theta_momentum", net.fc.weight.theta.momentum))
    out.append(("fc.alpha", net.fc.weight.alpha.data))
    out.append(("fc.alpha_momentum", net.fc.weight.alpha.momentum))
    out.append(("fc.bias", net.fc.bias.data))
    out.append(("fc.bias_momentum", net.fc.bias.momentum))
    return out


def _bn_batch_counts(net: CondNet) -> list[list[list[int]]]:
    return [
        [[dbn.stats_clean.batches, dbn.stats_adv.batches] for dbn in block.bns]
        for block in net.blocks
    ]


def save_checkpoint(
    path: str,
    net: CondNet,
    mask: PruneMask | None = None,
    extra: dict[str, Any] | None = None,
) -> None:
    arrays = _array_entries(net)
    mask_items = sorted(mask.masks.items()) if mask else []
    entries = []
    payloads = []
    for name, arr in arrays:
        raw = np.ascontiguousarray(arr).tobytes()
        entries.append({"name": name, "kind": "array", "dtype": str(arr.dtype), "shape": list(arr.shape)})
        payloads.append(raw)
    for name, m in mask_items:
        raw = np.packbits(m.reshape(-1)).tobytes()
        entries.append({"name": f"mask.{name}", "kind": "bits", "dtype": "bool", "shape": list(m.shape)})
        payloads.append(raw)

    meta = {
        "arch": {
            "channels": list(net.arch.channels),
            "kernel": net.arch.kernel,
            "strides": list(net.arch.strides),
            "padding": net.arch.padding,
        },
        "in_channels": net.in_channels,
        "n_classes": net.n_classes,
        "seed": net.seed,
        "slim_factors": list(net.slim_factors),
        "dtype": str(net.dtype),
        "bn_batches": _bn_batch_counts(net),
        "noise_rng_state": [w.rng.bit_generator.state for _, w in net.noisy_weights()],
        "mask": None
        if mask is None
        else {
            "granularity": mask.granularity,
            "density_target": mask.density_target,
            "achieved_density": mask.achieved_density,
        },
        "extra": extra or {},
        "entries": entries,
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(_HEAD.pack(MAGIC, VERSION, len(blob)))
        f.write(blob)
        for raw in payloads:
            f.write(raw)


def load_checkpoint(path: str) -> tuple[CondNet, PruneMask | None, dict]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEAD.size or raw[:4] != MAGIC:
        raise DataError("bad-magic: not a checkpoint file")
    _, version, meta_len = _HEAD.unpack_from(raw)
    if version != VERSION:
        raise DataError(f"bad-version: checkpoint version {version}")
    try:
        meta = json.loads(raw[_HEAD.size : _HEAD.size + meta_len])
    except ValueError as e:
        raise DataError(f"bad-metadata: {e}") from None

    net = CondNet(
        ArchConfig(
            channels=tuple(meta["arch"]["channels"]),
            kernel=meta["arch"]["kernel"],
            strides=tuple(meta["arch"]["strides"]),
            padding=meta["arch"]["padding"],
        ),
        in_channels=meta["in_channels"],
        n_classes=meta["n_classes"],
        seed=meta["seed"],
        slim_factors=tuple(meta["slim_factors"]),
        dtype=np.dtype(meta["dtype"]),
    )

    offset = _HEAD.size + meta_len
    loaded: dict[str, np.ndarray] = {}
    for entry in meta["entries"]:
        shape = tuple(entry["shape"])
        if entry["kind"] == "bits":
            n_bits = int(np.prod(shape)) if shape else 1
            n_bytes = (n_bits + 7) // 8
            if offset + n_bytes > len(raw):
                raise DataError("truncated-payload: checkpoint ends inside a bitset")
            bits = np.unpackbits(np.frombuffer(raw, np.uint8, n_bytes, offset))[:n_bits]
            loaded[entry["name"]] = bits.astype(bool).reshape(shape)
            offset += n_bytes
        else:
            dt = np.dtype(entry["dtype"])
            count = int(np.prod(shape)) if shape else 1
            n_bytes = dt.itemsize * count
            if offset + n_bytes > len(raw):
                raise DataError("truncated-payload: checkpoint ends inside an array")
            arr = np.frombuffer(raw, dt, count, offset).reshape(shape).copy()
            loaded[entry["name"]] = arr
            offset += n_bytes
    if offset != len(raw):
        raise DataError("trailing-bytes: checkpoint longer than its manifest")

    def put(target: np.ndarray, name: str) -> None:
        src = loaded[name]
        if src.shape != target.shape:
            raise DataError(f"shape-mismatch: {name} is {src.shape}, expected {target.shape}")
        target[...] = src

    for i, block in enumerate(net.blocks):
        p = f"conv{i}"
        put(block.weight.theta.data, f"{p}.theta")
        put(block.weight.theta.momentum, f"{p}.theta_momentum")
        block.weight.alpha.data = loaded[f"{p}.alpha"].reshape(())
        block.weight.alpha.momentum = loaded[f"{p}.alpha_momentum"].reshape(())
        for j, dbn in enumerate(block.bns):
            q = f"{p}.bn{j}"
            for branch in ("clean", "adv"):
                stats, gamma, beta = dbn.branch(branch)
                put(gamma.data, f"{q}.{branch}.gamma")
                put(gamma.momentum, f"{q}.{branch}.gamma_momentum")
                put(beta.data, f"{q}.{branch}.beta")
                put(beta.momentum, f"{q}.{branch}.beta_momentum")
                put(stats.running_mean, f"{q}.{branch}.running_mean")
                put(stats.running_var, f"{q}.{branch}.running_var")
            counts = meta["bn_batches"][i][j]
            dbn.stats_clean.batches = counts[0]
            dbn.stats_adv.batches = counts[1]
    put(net.fc.weight.theta.data, "fc.theta")
    put(net.fc.weight.theta.momentum, "fc.theta_momentum")
    net.fc.weight.alpha.data = loaded["fc.alpha"].reshape(())
    net.fc.weight.alpha.momentum = loaded["fc.alpha_momentum"].reshape(())
    put(net.fc.bias.data, "fc.bias")
    put(net.fc.bias.momentum, "fc.bias_momentum")

    for (name, w), state in zip(net.noisy_weights(), meta["noise_rng_state"]):
        w.rng.bit_generator.state = state

    mask = None
    if meta["mask"] is not None:
        masks = {
            e["name"][len("mask."):]: loaded[e["name"]]
            for e in meta["entries"]
            if e["kind"] == "bits"
        }
        mask = PruneMask(
            masks,
            meta["mask"]["granularity"],
            meta["mask"]["density_target"],
            meta["mask"]["achieved_density"],
        )
    return net, mask, meta
