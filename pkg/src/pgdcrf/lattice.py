"""Hashed integer lattice over the 5-D pixel feature space.

Each pixel feature ``f_i`` is quantised to ``floor(f_i)``. Two pixels
interact through the bilateral bank when their cells differ by at most
``radius`` in every coordinate; the tap used is the flat index of
``cell_j - cell_i`` inside the ``(2*radius+1)**5`` offset cube.
"""

from dataclasses import dataclass
from itertools import product

import numpy as np

FEATURE_DIM = 5


def window_size(radius: int) -> int:
    return (2 * radius + 1) ** FEATURE_DIM


def offset_to_index(delta, radius: int) -> int:
    """Flat tap index of an integer offset vector (C order over the 5 axes)."""
    delta = np.asarray(delta, dtype=np.int64)
    if delta.shape != (FEATURE_DIM,) or np.any(np.abs(delta) > radius):
        raise ValueError(f"offset {delta.tolist()} outside the radius-{radius} cube")
    side = 2 * radius + 1
    return int(np.ravel_multi_index(tuple(delta + radius), (side,) * FEATURE_DIM))


def index_to_offset(index: int, radius: int) -> np.ndarray:
    side = 2 * radius + 1
    return np.array(np.unravel_index(index, (side,) * FEATURE_DIM), dtype=np.int64) - radius


def all_offsets(radius: int) -> np.ndarray:
    """``(K, 5)`` offsets in flat-index order."""
    r = range(-radius, radius + 1)
    return np.array(list(product(r, repeat=FEATURE_DIM)), dtype=np.int64).reshape(-1, FEATURE_DIM)


@dataclass(frozen=True)
class FeatureLattice:
    radius: int
    cells: np.ndarray  # (N, 5) int64
    cell_members: dict  # tuple(cell) -> ascending int64 pixel indices
    indptr: np.ndarray
    indices: np.ndarray
    tap: np.ndarray

    @property
    def n_pixels(self) -> int:
        return self.cells.shape[0]

    @property
    def n_taps(self) -> int:
        return window_size(self.radius)

    @property
    def n_pairs(self) -> int:
        return int(self.indices.shape[0])


def quantize(values) -> np.ndarray:
    return np.floor(np.asarray(values, dtype=np.float64)).astype(np.int64)


def build_feature_lattice(values, radius: int) -> FeatureLattice:
    """Hash pixels into feature cells and list every interacting ordered pair.

    ``values`` is the ``(N, 5)`` scaled feature array. The neighbour list of
    each pixel is sorted by pixel index, which fixes the summation order of
    the bilateral response.
    """
    if radius < 0:
        raise ValueError("lattice radius must be non-negative")
    cells = quantize(values)
    if cells.ndim != 2 or cells.shape[1] != FEATURE_DIM:
        raise ValueError(f"features must be (N, {FEATURE_DIM}), got {cells.shape}")
    n = cells.shape[0]
    members: dict = {}
    for i, c in enumerate(map(tuple, cells.tolist())):
        members.setdefault(c, []).append(i)
    members = {c: np.asarray(v, dtype=np.int64) for c, v in members.items()}

    offsets = all_offsets(radius)
    side = 2 * radius + 1
    strides = side ** np.arange(FEATURE_DIM - 1, -1, -1)
    flat = (offsets + radius) @ strides

    # neighbour candidates are shared by all pixels of a cell
    per_cell = {}
    for c in members:
        base = np.asarray(c, dtype=np.int64)
        js, ts = [], []
        for off, t in zip(offsets, flat):
            other = members.get(tuple((base + off).tolist()))
            if other is not None:
                js.append(other)
                ts.append(np.full(other.shape[0], t, dtype=np.int64))
        j = np.concatenate(js)
        t = np.concatenate(ts)
        order = np.argsort(j, kind="stable")
        per_cell[c] = (j[order], t[order])

    counts = np.zeros(n + 1, dtype=np.int64)
    rows_j, rows_t = [], []
    for i, c in enumerate(map(tuple, cells.tolist())):
        j, t = per_cell[c]
        keep = j != i
        rows_j.append(j[keep])
        rows_t.append(t[keep])
        counts[i + 1] = rows_j[-1].shape[0]
    indptr = np.cumsum(counts)
    indices = np.concatenate(rows_j) if rows_j else np.zeros(0, dtype=np.int64)
    tap = np.concatenate(rows_t) if rows_t else np.zeros(0, dtype=np.int64)
    return FeatureLattice(radius, cells, members, indptr, indices, tap)


def empty_lattice(n: int) -> FeatureLattice:
    """Lattice with no pairs, used when an instance has no bilateral term."""
    z = np.zeros(0, dtype=np.int64)
    return FeatureLattice(0, np.zeros((n, FEATURE_DIM), dtype=np.int64), {}, np.zeros(n + 1, dtype=np.int64), z, z)
