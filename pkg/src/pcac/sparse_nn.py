"""Sparse-tensor network layers and the per-scale encoder/decoder stacks.

A layer never invents coordinates: every operation maps features between
coordinate sets taken from the geometry pyramid, so the decoder (which knows
the geometry) can replay the exact same computation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter
from .errors import ShapeMismatch
from .tensor_core import CoordIndex, ScalePyramid


def kernel_offsets(kernel_size: int):
    """Centered offsets for odd kernels, {0..k-1} for even ones; lex order."""
    if kernel_size % 2 == 1:
        r = kernel_size // 2
        axis = range(-r, r + 1)
    else:
        axis = range(kernel_size)
    return [(dx, dy, dz) for dx in axis for dy in axis for dz in axis]


def build_kernel_map(in_coords, out_coords, kernel_size: int, dilation: int):
    """Per-offset (input_row, output_row) pair lists.

    A pair (i, j) exists for offset o exactly when
    in_coords[i] == out_coords[j] + o * dilation.
    """
    in_index = CoordIndex(np.asarray(in_coords, dtype=np.int64))
    out_coords = np.asarray(out_coords, dtype=np.int64)
    pairs = []
    for off in kernel_offsets(kernel_size):
        shifted = out_coords + np.asarray(off, dtype=np.int64) * dilation
        rows_in = in_index.lookup(shifted)
        hit = rows_in >= 0
        pairs.append((rows_in[hit], np.nonzero(hit)[0]))
    return pairs


class FusedKernelMap:
    """Kernel map preprocessed for fast apply: concatenated pair arrays plus
    sorted-segment scatter plans (np.add.reduceat beats np.add.at by a wide
    margin and keeps a fixed summation order)."""

    def __init__(self, pairs, n_in: int, n_out: int):
        self.n_in = n_in
        self.n_out = n_out
        self.offset_slices = []  # (start, stop, offset_index)
        parts_in, parts_out = [], []
        start = 0
        for oi, (rows_in, rows_out) in enumerate(pairs):
            if len(rows_in) == 0:
                continue
            parts_in.append(np.asarray(rows_in, dtype=np.int64))
            parts_out.append(np.asarray(rows_out, dtype=np.int64))
            stop = start + len(rows_in)
            self.offset_slices.append((start, stop, oi))
            start = stop
        if parts_in:
            self.rows_in = np.concatenate(parts_in)
            self.rows_out = np.concatenate(parts_out)
        else:
            self.rows_in = np.empty(0, dtype=np.int64)
            self.rows_out = np.empty(0, dtype=np.int64)
        self.out_plan = self._scatter_plan(self.rows_out)
        self.in_plan = self._scatter_plan(self.rows_in)

    @staticmethod
    def _scatter_plan(rows):
        perm = np.argsort(rows, kind="stable")
        srows = rows[perm]
        starts = np.ones(len(srows), dtype=bool)
        starts[1:] = srows[1:] != srows[:-1]
        seg_starts = np.flatnonzero(starts)
        seg_rows = srows[seg_starts] if len(srows) else srows
        return perm, seg_starts, seg_rows

    @staticmethod
    def scatter(values, plan, n_out: int):
        """Sum `values` rows into an (n_out, C) array per the plan."""
        perm, seg_starts, seg_rows = plan
        out = np.zeros((n_out, values.shape[1]), dtype=np.float64)
        if len(perm):
            out[seg_rows] = np.add.reduceat(values[perm], seg_starts, axis=0)
        return out


class KernelMapCache:
    """Geometry-derived kernel maps for one pyramid, built lazily."""

    def __init__(self, pyramid: ScalePyramid):
        self.pyramid = pyramid
        self._maps = {}

    def self_map(self, level: int, kernel_size: int = 3) -> FusedKernelMap:
        key = ("self", level, kernel_size)
        if key not in self._maps:
            c = self.pyramid.coords[level]
            pairs = build_kernel_map(c, c, kernel_size,
                                     self.pyramid.stride(level))
            self._maps[key] = FusedKernelMap(pairs, len(c), len(c))
        return self._maps[key]

    def up_map(self, level: int) -> FusedKernelMap:
        """Transpose-conv map from `level` down to `level - 1` (k=2)."""
        key = ("up", level)
        if key not in self._maps:
            fine = self.pyramid.coords[level - 1]
            coarse = self.pyramid.coords[level]
            # pairs at offset o satisfy fine == coarse + o * fine_stride;
            # flipped here so features flow coarse -> fine
            pairs = [(b, a) for a, b in build_kernel_map(
                fine, coarse, 2, self.pyramid.stride(level - 1))]
            self._maps[key] = FusedKernelMap(pairs, len(coarse), len(fine))
        return self._maps[key]

    def pool_children(self, level: int):
        """Child-row table (n_parents, 8) for 2x pooling into `level`; -1 = absent."""
        key = ("pool", level)
        if key not in self._maps:
            parents = self.pyramid.coords[level]
            s = self.pyramid.stride(level - 1)
            idx = np.empty((len(parents), 8), dtype=np.int64)
            fine_index = self.pyramid.indexes[level - 1]
            for oi, off in enumerate(kernel_offsets(2)):
                idx[:, oi] = fine_index.lookup(
                    parents + np.asarray(off, dtype=np.int64) * s)
            self._maps[key] = idx
        return self._maps[key]


class SparseConv:
    """Generalized sparse convolution with one weight matrix per offset."""

    def __init__(self, c_in: int, c_out: int, kernel_size: int, rng,
                 weight_scale: float = 1.0):
        self.c_in = c_in
        self.c_out = c_out
        self.kernel_size = kernel_size
        n_off = len(kernel_offsets(kernel_size))
        limit = weight_scale * np.sqrt(6.0 / (c_in * n_off))
        self.weights = [Parameter(rng.uniform(-limit, limit, (c_in, c_out)))
                        for _ in range(n_off)]
        self.bias = Parameter(np.zeros(c_out))

    def parameters(self):
        return self.weights + [self.bias]

    def named_parameters(self, prefix: str):
        out = [(f"{prefix}.w{i:02d}", w) for i, w in enumerate(self.weights)]
        out.append((f"{prefix}.bias", self.bias))
        return out

    def __call__(self, x: Node, fmap: FusedKernelMap) -> Node:
        """out[j] = bias + sum_o sum_{(i,j) in map[o]} x[i] @ W_o.

        One fused node: gather all pairs, per-offset matmul, segment-sum
        scatter. Gradients route back through the same index plans.
        """
        if x.value.shape[1] != self.c_in:
            raise ShapeMismatch(
                f"conv expects {self.c_in} input channels, got {x.value.shape[1]}")
        n_out = fmap.n_out
        slices = fmap.offset_slices
        live = [self.weights[oi] for _, _, oi in slices]
        gathered = x.value[fmap.rows_in]
        prod = np.empty((len(gathered), self.c_out), dtype=np.float64)
        for (a, b, _), w in zip(slices, live):
            prod[a:b] = gathered[a:b] @ w.value
        out = FusedKernelMap.scatter(prod, fmap.out_plan, n_out)
        out += self.bias.value

        def bwd(g):
            g_pairs = g[fmap.rows_out]
            gx_pairs = np.empty((len(gathered), self.c_in), dtype=np.float64)
            grads = [None]  # placeholder for x
            for (a, b, _), w in zip(slices, live):
                gx_pairs[a:b] = g_pairs[a:b] @ w.value.T
                grads.append(gathered[a:b].T @ g_pairs[a:b])
            grads[0] = FusedKernelMap.scatter(gx_pairs, fmap.in_plan,
                                              fmap.n_in)
            grads.append(g.sum(axis=0))
            return tuple(grads)

        return Node(out, (x, *live, self.bias), bwd)


def max_pool2(x: Node, child_rows) -> Node:
    """Channel-wise max over existing stride-2 children (ties: lowest child)."""
    gathered = [ad.gather_rows(x, child_rows[:, oi], fill=-np.inf)
                for oi in range(child_rows.shape[1])]
    return ad.rowwise_max(*gathered)


class ResidualBlock:
    """conv - ReLU - conv plus identity skip; second conv starts small."""

    def __init__(self, channels: int, rng):
        self.conv1 = SparseConv(channels, channels, 3, rng)
        self.conv2 = SparseConv(channels, channels, 3, rng, weight_scale=0.1)

    def parameters(self):
        return self.conv1.parameters() + self.conv2.parameters()

    def named_parameters(self, prefix: str):
        return (self.conv1.named_parameters(f"{prefix}.conv1")
                + self.conv2.named_parameters(f"{prefix}.conv2"))

    def __call__(self, x: Node, fmap: FusedKernelMap) -> Node:
        h = ad.relu(self.conv1(x, fmap))
        return ad.add(x, self.conv2(h, fmap))


@dataclass
class ModelConfig:
    num_scales: int = 3
    hidden: int = 64
    latent_channels: int = 5
    res_blocks: int = 8
    mixtures: int = 10
    num_bins: int = 26

    def decoder_head_width(self, scale: int) -> int:
        # bottom decoder predicts RGB (12 values per mixture); the others
        # predict the independent-channel latent mixtures
        if scale == 1:
            return 12 * self.mixtures
        return 3 * self.mixtures * self.latent_channels

    def to_dict(self):
        return dict(num_scales=self.num_scales, hidden=self.hidden,
                    latent_channels=self.latent_channels,
                    res_blocks=self.res_blocks, mixtures=self.mixtures,
                    num_bins=self.num_bins)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class ScaleEncoder:
    """conv + max-pool, residual blocks, then latent / forwarding branches."""

    def __init__(self, scale: int, cfg: ModelConfig, rng):
        self.scale = scale
        c_in = 3 if scale == 1 else cfg.hidden
        h = cfg.hidden
        self.head = SparseConv(c_in, h, 3, rng)
        self.blocks = [ResidualBlock(h, rng) for _ in range(cfg.res_blocks)]
        self.to_latent = SparseConv(h, cfg.latent_channels, 3, rng)
        self.to_forward = SparseConv(h, h, 3, rng)

    def named_parameters(self):
        p = f"enc{self.scale}"
        out = self.head.named_parameters(f"{p}.head")
        for i, b in enumerate(self.blocks):
            out += b.named_parameters(f"{p}.block{i}")
        out += self.to_latent.named_parameters(f"{p}.to_latent")
        out += self.to_forward.named_parameters(f"{p}.to_forward")
        return out

    def __call__(self, x: Node, maps: KernelMapCache):
        """x lives on level scale-1 coords; outputs live on level `scale`."""
        h = ad.relu(self.head(x, maps.self_map(self.scale - 1)))
        h = max_pool2(h, maps.pool_children(self.scale))
        fmap = maps.self_map(self.scale)
        for block in self.blocks:
            h = block(h, fmap)
        latent_pre = self.to_latent(h, fmap)
        forward = self.to_forward(h, fmap)
        return latent_pre, forward


class ScaleDecoder:
    """conv, residual blocks, transpose-conv upsampler, parameter/forward heads."""

    def __init__(self, scale: int, cfg: ModelConfig, rng):
        self.scale = scale
        h = cfg.hidden
        c_in = cfg.latent_channels if scale == cfg.num_scales \
            else cfg.latent_channels + h
        self.conv_in = SparseConv(c_in, h, 3, rng)
        self.blocks = [ResidualBlock(h, rng) for _ in range(cfg.res_blocks)]
        self.upsample = SparseConv(h, h, 2, rng)
        self.to_params = SparseConv(h, cfg.decoder_head_width(scale), 3, rng)
        self.to_forward = SparseConv(h, h, 3, rng)

    def named_parameters(self):
        p = f"dec{self.scale}"
        out = self.conv_in.named_parameters(f"{p}.conv_in")
        for i, b in enumerate(self.blocks):
            out += b.named_parameters(f"{p}.block{i}")
        out += self.upsample.named_parameters(f"{p}.upsample")
        out += self.to_params.named_parameters(f"{p}.to_params")
        out += self.to_forward.named_parameters(f"{p}.to_forward")
        return out

    def __call__(self, latent: Node, forwarded, maps: KernelMapCache):
        """latent (+ forwarded feature) on level `scale`; outputs on scale-1."""
        x = latent if forwarded is None else ad.concat_cols(latent, forwarded)
        fmap = maps.self_map(self.scale)
        h = ad.relu(self.conv_in(x, fmap))
        for block in self.blocks:
            h = block(h, fmap)
        up = ad.relu(self.upsample(h, maps.up_map(self.scale)))
        fmap_fine = maps.self_map(self.scale - 1)
        params = self.to_params(up, fmap_fine)
        forward = self.to_forward(up, fmap_fine)
        return params, forward
