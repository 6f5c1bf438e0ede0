"""Sparse voxel tensors: canonical coordinate ordering, hashing, multiscale pyramid.

Coordinates are integer (N, 3) arrays. The canonical order everywhere is
lexicographic (x, y, z); both the coder and the network iterate points in
this order, which is what makes encode/decode deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DuplicateCoordinate, EmptyGeometry, ShapeMismatch, StrideViolation

# Coordinates are packed into a single int64 key for sorting / hashing.
# 21 bits per component, biased; covers roughly +/- 1e6 which is far beyond
# any voxel grid this codec handles.
_BIAS = 1 << 20


def pack_coords(coords: np.ndarray) -> np.ndarray:
    """Pack (N,3) int coords into sortable int64 keys (lexicographic order)."""
    c = np.asarray(coords, dtype=np.int64)
    return ((c[:, 0] + _BIAS) << 42) | ((c[:, 1] + _BIAS) << 21) | (c[:, 2] + _BIAS)


def sort_coords(coords: np.ndarray) -> np.ndarray:
    """Permutation that puts coords in canonical lexicographic order."""
    return np.argsort(pack_coords(coords), kind="stable")


class CoordIndex:
    """Coordinate -> row lookup over a sorted coordinate array.

    Lookup is vectorized via searchsorted on packed keys; misses map to -1.
    """

    def __init__(self, sorted_coords: np.ndarray):
        self.coords = np.asarray(sorted_coords, dtype=np.int64)
        self.keys = pack_coords(self.coords)

    def __len__(self):
        return len(self.keys)

    def lookup(self, coords: np.ndarray) -> np.ndarray:
        """Row indices of `coords` (or -1 where absent)."""
        if len(self.keys) == 0:
            return np.full(len(coords), -1, dtype=np.int64)
        q = pack_coords(coords)
        pos = np.searchsorted(self.keys, q)
        pos = np.minimum(pos, len(self.keys) - 1)
        hit = self.keys[pos] == q
        return np.where(hit, pos, -1)


@dataclass
class SparseTensor:
    """Sorted unique voxel coordinates with one feature row per coordinate."""

    coords: np.ndarray  # (N, 3) int64, strictly lexicographically increasing
    features: np.ndarray  # (N, C) float64
    stride: int = 1
    index: CoordIndex = field(init=False, repr=False)

    def __post_init__(self):
        self.index = CoordIndex(self.coords)

    def __len__(self):
        return len(self.coords)


def build_sparse_tensor(coords, features, stride: int = 1) -> SparseTensor:
    """Canonicalize (sort, validate) raw coordinate/feature arrays.

    Raises DuplicateCoordinate on repeated coords and StrideViolation when a
    component is not divisible by `stride`.
    """
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[:, None]
    if len(features) != len(coords):
        raise ShapeMismatch(
            f"{len(features)} feature rows for {len(coords)} coordinates")
    if stride < 1 or (stride & (stride - 1)) != 0:
        raise StrideViolation(f"stride must be a positive power of two, got {stride}")
    if np.any(coords % stride != 0):
        raise StrideViolation(f"coordinate not divisible by stride {stride}")
    perm = sort_coords(coords)
    coords = coords[perm]
    features = features[perm]
    keys = pack_coords(coords)
    if len(keys) > 1 and np.any(keys[1:] == keys[:-1]):
        i = int(np.argmax(keys[1:] == keys[:-1]))
        raise DuplicateCoordinate(f"duplicate coordinate {tuple(coords[i])}")
    return SparseTensor(coords, features, stride)


def downsample_coords(coords: np.ndarray, stride: int) -> np.ndarray:
    """Unique parent coordinates at stride 2*stride (floor division, sorted)."""
    c = np.asarray(coords, dtype=np.int64)
    s2 = 2 * stride
    parents = (c // s2) * s2  # floor division: correct for negatives
    keys = pack_coords(parents)
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    parents = parents[order]
    keep = np.ones(len(parents), dtype=bool)
    keep[1:] = keys[1:] != keys[:-1]
    return parents[keep]


@dataclass
class ScalePyramid:
    """Coordinate sets for levels 0..num_levels, derived from geometry alone."""

    coords: list  # coords[n]: (N_n, 3) sorted, at stride 2**n
    indexes: list  # CoordIndex per level

    @property
    def num_levels(self):
        return len(self.coords) - 1

    def stride(self, level: int) -> int:
        return 1 << level


def build_pyramid(geometry: np.ndarray, num_levels: int = 3) -> ScalePyramid:
    """Build the multiscale coordinate pyramid from level-0 geometry.

    Level n is the n-fold stride-2 downsampling of level 0. The pyramid is a
    pure function of the geometry, so encoder and decoder always agree on it.
    """
    geometry = np.asarray(geometry, dtype=np.int64).reshape(-1, 3)
    if len(geometry) == 0:
        raise EmptyGeometry("cannot build a pyramid from empty geometry")
    level0 = geometry[sort_coords(geometry)]
    coords = [level0]
    for n in range(num_levels):
        coords.append(downsample_coords(coords[-1], 1 << n))
    indexes = [CoordIndex(c) for c in coords]
    return ScalePyramid(coords, indexes)
