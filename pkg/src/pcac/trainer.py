"""Training loop (Adam + step decay + early stopping) and rate evaluation."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import AdamConfig, adam_step, backward
from .codec import (CodecModel, ModelCheckpoint, block_loss, encode_blocks,
                    measure_bpp)
from .errors import EmptyDataset
from .pc_io import partition_blocks, read_ply, voxelize
from .sparse_nn import KernelMapCache
from .tensor_core import build_pyramid


@dataclass
class TrainConfig:
    batch_size: int = 128
    lr: float = 5e-4
    lr_decay: float = 0.75
    lr_decay_interval: int = 5
    patience: int = 20
    max_epochs: int = 200
    seed: int = 0
    val_fraction: float = 0.1

    def adam(self) -> AdamConfig:
        return AdamConfig(lr=self.lr, decay=self.lr_decay,
                          decay_interval=self.lr_decay_interval)


class _BlockData:
    """One training block with its geometry-derived caches."""

    def __init__(self, geometry, rgb, num_scales):
        from .tensor_core import sort_coords
        geometry = np.asarray(geometry, dtype=np.int64).reshape(-1, 3)
        perm = sort_coords(geometry)
        self.rgb = np.asarray(rgb, dtype=np.int64)[perm]
        pyramid = build_pyramid(geometry, num_scales)
        self.maps = KernelMapCache(pyramid)
        self.num_points = len(geometry)


def _as_pairs(blocks):
    out = []
    for b in blocks:
        if hasattr(b, "tensor"):  # pc_io.Block
            out.append((b.tensor.coords, b.tensor.features.astype(np.int64)))
        else:
            out.append(b)
    return out


def _total_loss(model, data: _BlockData):
    loss, const = block_loss(model, None, data.rgb, maps=data.maps)
    return loss, const


def train(blocks, config: TrainConfig | None = None,
          model: CodecModel | None = None,
          time_budget_s: float | None = None,
          log=None) -> ModelCheckpoint:
    """Fit the stack on a set of blocks; returns the best-validation checkpoint.

    Fully deterministic for a given seed: the validation split, per-epoch
    shuffle, and gradient accumulation order are all derived from it.
    """
    config = config or TrainConfig()
    model = model or CodecModel(seed=config.seed)
    pairs = _as_pairs(blocks)
    if not pairs:
        raise EmptyDataset("no training blocks")
    data = [_BlockData(g, f, model.config.num_scales) for g, f in pairs]

    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(data))
    n_val = int(round(config.val_fraction * len(data)))
    n_val = min(n_val, len(data) - 1)
    val = [data[i] for i in order[:n_val]]
    tr = [data[i] for i in order[n_val:]]
    if not val:  # tiny datasets: early-stop on the training loss
        val = tr

    params = model.parameters()
    adam_cfg = config.adam()
    best = None  # (val_bits_per_point, epoch, weights)
    bad_epochs = 0
    start = time.monotonic()
    history = []

    for epoch in range(config.max_epochs):
        perm = rng.permutation(len(tr))
        for lo in range(0, len(tr), config.batch_size):
            batch = [tr[i] for i in perm[lo:lo + config.batch_size]]
            for p in params:
                p.grad = None
            for d in batch:
                loss, _ = _total_loss(model, d)
                backward(loss)
            for p in params:
                if p.grad is not None:
                    p.grad /= len(batch)
            adam_step(params, adam_cfg, epoch)
            model.mark_dirty()

        val_bits = 0.0
        val_points = 0
        for d in val:
            loss, const = _total_loss(model, d)
            val_bits += float(loss.value) + const
            val_points += d.num_points
        val_bpp = val_bits / val_points
        history.append(val_bpp)
        if log:
            log(f"epoch {epoch}: val {val_bpp:.3f} bits/point "
                f"(lr {adam_cfg.lr_at(epoch):.2e})")

        if best is None or val_bpp < best[0]:
            best = (val_bpp, epoch,
                    [np.array(p.value, copy=True) for p in params])
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break
        if time_budget_s is not None and \
                time.monotonic() - start > time_budget_s:
            break

    for p, w in zip(params, best[2]):
        p.value[...] = w
    model.mark_dirty()
    return ModelCheckpoint(model, {
        "epoch": best[1],
        "val_bits_per_point": best[0],
        "epochs_run": len(history),
        "seed": config.seed,
    })


def evaluate(paths, model: CodecModel, block_size: int = 64):
    """Encode whole point-cloud files; report rate and timing per file.

    Returns rows of {name, points, bpp, enc_seconds} plus an average row.
    """
    rows = []
    for path in paths:
        path = Path(path)
        pc = read_ply(path)
        depth = max(1, int(np.ceil(np.log2(
            max(2.0, float(pc.positions.max()) + 1)))))
        tensor = voxelize(pc, depth)
        blocks = partition_blocks(tensor, block_size)
        t0 = time.monotonic()
        data = encode_blocks(
            [(b.origin, b.tensor.coords, b.tensor.features.astype(np.int64))
             for b in blocks], model)
        elapsed = time.monotonic() - t0
        rows.append({
            "name": path.stem,
            "points": len(tensor),
            "bpp": measure_bpp(data, len(tensor)),
            "enc_seconds": elapsed,
        })
    if rows:
        total_bits = sum(r["bpp"] * r["points"] for r in rows)
        total_points = sum(r["points"] for r in rows)
        rows.append({
            "name": "Average",
            "points": total_points,
            "bpp": total_bits / total_points,
            "enc_seconds": sum(r["enc_seconds"] for r in rows) / len(rows),
        })
    return rows
