"""PLY I/O, voxelization, and 64-aligned block partitioning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (MalformedHeader, MissingProperty, OutOfRange,
                     UnsupportedFormat)
from .tensor_core import SparseTensor, build_sparse_tensor, pack_coords

_PLY_DTYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass
class PointCloud:
    positions: np.ndarray  # (N, 3)
    colors: np.ndarray  # (N, 3) ints in 0..255
    bit_depth: int | None = None

    def __len__(self):
        return len(self.positions)


def _parse_ply_header(f):
    if f.readline().strip() != b"ply":
        raise MalformedHeader("missing 'ply' magic line")
    fmt = None
    elements = []  # (name, count, [(prop_name, dtype_code)])
    while True:
        line = f.readline()
        if not line:
            raise MalformedHeader("header ended before end_header")
        tokens = line.decode("ascii", "replace").split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise MalformedHeader("property before any element")
            if tokens[1] == "list":
                elements[-1][2].append((tokens[-1], ("list", tokens[2], tokens[3])))
            else:
                if tokens[1] not in _PLY_DTYPES:
                    raise MalformedHeader(f"unknown property type {tokens[1]}")
                elements[-1][2].append((tokens[-1], _PLY_DTYPES[tokens[1]]))
        elif tokens[0] == "end_header":
            break
    if fmt == "binary_big_endian":
        raise UnsupportedFormat("binary_big_endian PLY is not supported")
    if fmt not in ("ascii", "binary_little_endian"):
        raise MalformedHeader(f"unknown format {fmt!r}")
    return fmt, elements


def read_ply(path) -> PointCloud:
    """Read x,y,z + red,green,blue from an ascii or little-endian binary PLY."""
    with open(path, "rb") as f:
        fmt, elements = _parse_ply_header(f)
        vertex = next((e for e in elements if e[0] == "vertex"), None)
        if vertex is None:
            raise MalformedHeader("no vertex element")
        name, count, props = vertex
        names = [p[0] for p in props]
        for required in ("x", "y", "z", "red", "green", "blue"):
            if required not in names:
                raise MissingProperty(f"vertex property {required!r} missing")
        if any(isinstance(p[1], tuple) for p in props):
            raise UnsupportedFormat("list property on the vertex element")
        if elements[0][0] != "vertex":
            raise UnsupportedFormat("vertex is not the first element")
        if fmt == "ascii":
            rows = []
            for _ in range(count):
                parts = f.readline().split()
                if len(parts) < len(props):
                    raise MalformedHeader("short vertex row")
                rows.append([float(v) for v in parts[:len(props)]])
            table = {n: np.array([r[i] for r in rows])
                     for i, n in enumerate(names)}
        else:
            dtype = np.dtype([(n, "<" + code) for n, code in props])
            raw = np.frombuffer(f.read(dtype.itemsize * count), dtype=dtype,
                                count=count)
            table = {n: raw[n].astype(np.float64) for n in names}
    positions = np.stack([table["x"], table["y"], table["z"]], axis=1)
    colors = np.stack([table["red"], table["green"], table["blue"]], axis=1)
    return PointCloud(positions, colors.astype(np.int64))


def write_ply(pc: PointCloud, path, binary: bool = True):
    """Write positions + RGB; integer positions stay exact (float32 storage
    is exact for voxel grids up to 2^24)."""
    n = len(pc)
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {n}",
              "property float x", "property float y", "property float z",
              "property uchar red", "property uchar green", "property uchar blue",
              "end_header"]
    pos = np.asarray(pc.positions, dtype=np.float32)
    col = np.asarray(pc.colors, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            rec = np.empty(n, dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                                     ("r", "u1"), ("g", "u1"), ("b", "u1")])
            rec["x"], rec["y"], rec["z"] = pos[:, 0], pos[:, 1], pos[:, 2]
            rec["r"], rec["g"], rec["b"] = col[:, 0], col[:, 1], col[:, 2]
            f.write(rec.tobytes())
        else:
            for i in range(n):
                f.write((f"{pos[i, 0]:g} {pos[i, 1]:g} {pos[i, 2]:g} "
                         f"{col[i, 0]} {col[i, 1]} {col[i, 2]}\n").encode())


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def voxelize(pc: PointCloud, bit_depth: int) -> SparseTensor:
    """Floor positions to the integer grid; merge duplicates by color mean."""
    pos = np.asarray(pc.positions, dtype=np.float64)
    if np.any(pos < 0) or np.any(pos >= (1 << bit_depth)):
        raise OutOfRange(f"positions outside [0, 2^{bit_depth})")
    coords = np.floor(pos).astype(np.int64)
    colors = np.asarray(pc.colors, dtype=np.float64)
    keys = pack_coords(coords)
    order = np.argsort(keys, kind="stable")
    keys, coords, colors = keys[order], coords[order], colors[order]
    group_start = np.ones(len(keys), dtype=bool)
    group_start[1:] = keys[1:] != keys[:-1]
    group_id = np.cumsum(group_start) - 1
    n_groups = group_id[-1] + 1
    sums = np.zeros((n_groups, 3))
    np.add.at(sums, group_id, colors)
    counts = np.bincount(group_id, minlength=n_groups).astype(np.float64)
    means = _round_half_away(sums / counts[:, None])
    return build_sparse_tensor(coords[group_start], means)


@dataclass
class Block:
    origin: np.ndarray  # (3,) int, multiple of the block size
    tensor: SparseTensor  # local coords in [0, size)


def partition_blocks(tensor: SparseTensor, size: int = 64):
    """Split a tensor into grid-aligned blocks, sorted by origin."""
    origins = (tensor.coords // size) * size
    keys = pack_coords(origins)
    order = np.argsort(keys, kind="stable")
    keys_sorted = keys[order]
    starts = np.ones(len(keys_sorted), dtype=bool)
    starts[1:] = keys_sorted[1:] != keys_sorted[:-1]
    bounds = np.flatnonzero(starts).tolist() + [len(keys_sorted)]
    blocks = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        rows = order[a:b]
        origin = origins[rows[0]]
        local = tensor.coords[rows] - origin
        blocks.append(Block(origin, build_sparse_tensor(
            local, tensor.features[rows])))
    return blocks


def assemble_blocks(blocks) -> SparseTensor:
    """Inverse of partition_blocks."""
    coords = np.concatenate([b.origin + b.tensor.coords for b in blocks])
    feats = np.concatenate([b.tensor.features for b in blocks])
    return build_sparse_tensor(coords, feats)


def write_block_manifest(blocks, path):
    """Text bookkeeping: one 'x y z count' line per block."""
    with open(path, "w") as f:
        for b in blocks:
            ox, oy, oz = (int(v) for v in b.origin)
            f.write(f"{ox} {oy} {oz} {len(b.tensor)}\n")
