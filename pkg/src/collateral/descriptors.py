"""Hand-crafted texture descriptors: 3D local binary patterns and 3D HOG.

LBP codes threshold the 26-neighbourhood of a voxel against the voxel itself
(``neighbour >= centre`` gives a 1). Neighbours are scanned with z slowest and
x fastest, and the first neighbour becomes the most significant bit. Codes with
at most two 0/1 transitions (counted along the bit string, not circularly) get
their own histogram bin; all other codes share one final bin.
"""
from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np

from .errors import ShapeError
from .volume import Cube

N_BITS = 26
HOG_BINS = 10
HOG_KERNEL = np.array([1.0, 0.0, -2.0, 0.0, 1.0])

# (dx, dy, dz) for each bit, z slowest, centre excluded
NEIGHBOR_OFFSETS = tuple(
    (dx, dy, dz)
    for dz, dy, dx in itertools.product((-1, 0, 1), repeat=3)
    if (dx, dy, dz) != (0, 0, 0)
)


def transitions(code, n_bits: int = N_BITS) -> int:
    """Number of adjacent unequal bit pairs.

    ``code`` is either an int (read as ``n_bits`` bits) or a string of 0/1.
    """
    if isinstance(code, str):
        return sum(a != b for a, b in zip(code, code[1:]))
    code = int(code)
    mask = (1 << (n_bits - 1)) - 1
    return bin((code ^ (code >> 1)) & mask).count("1")


def transitions_array(codes, n_bits: int = N_BITS) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.uint32)
    mask = np.uint32((1 << (n_bits - 1)) - 1)
    return np.bitwise_count((codes ^ (codes >> np.uint32(1))) & mask).astype(np.int64)


def lbp_codes(channel: np.ndarray) -> np.ndarray:
    """26-bit codes for every interior voxel, shape ``(E-2, E-2, E-2)``."""
    v = np.asarray(channel)
    if v.ndim != 3 or min(v.shape) < 3:
        raise ShapeError(f"need a 3D block with every side >= 3, got {v.shape}")
    nx, ny, nz = v.shape
    center = v[1:-1, 1:-1, 1:-1]
    codes = np.zeros(center.shape, dtype=np.uint32)
    for i, (dx, dy, dz) in enumerate(NEIGHBOR_OFFSETS):
        nb = v[1 + dx:nx - 1 + dx, 1 + dy:ny - 1 + dy, 1 + dz:nz - 1 + dz]
        codes |= (nb >= center).astype(np.uint32) << np.uint32(N_BITS - 1 - i)
    return codes


def lbp_code_at(vol: np.ndarray, voxel) -> int:
    x, y, z = voxel
    v = np.asarray(vol)
    if not all(1 <= c < n - 1 for c, n in zip(voxel, v.shape)):
        raise ShapeError(f"voxel {voxel} has no full 26-neighbourhood")
    return int(lbp_codes(v[x - 1:x + 2, y - 1:y + 2, z - 1:z + 2])[0, 0, 0])


class LbpBinTable:
    """Code -> bin map: one bin per uniform code, then one shared bin."""

    def __init__(self, n_bits: int = N_BITS):
        self.n_bits = n_bits
        full = (1 << n_bits) - 1
        uniform = set()
        # at most two transitions == a (possibly empty) run of ones, or its complement
        for lo in range(n_bits + 1):
            for hi in range(lo, n_bits + 1):
                run = ((1 << (hi - lo)) - 1) << lo
                uniform.add(run)
                uniform.add(full ^ run)
        self.uniform_codes = np.array(sorted(uniform), dtype=np.uint32)
        self.nonuniform_bin = len(self.uniform_codes)

    @property
    def n_bins(self) -> int:
        return len(self.uniform_codes) + 1

    def __len__(self):
        return self.n_bins

    def lookup(self, codes) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.uint32)
        idx = np.searchsorted(self.uniform_codes, codes)
        idx = np.minimum(idx, len(self.uniform_codes) - 1)
        hit = self.uniform_codes[idx] == codes
        return np.where(hit, idx, self.nonuniform_bin)

    def __getitem__(self, code) -> int:
        return int(self.lookup(np.array([code]))[0])


@lru_cache(maxsize=None)
def lbp_bin_table(n_bits: int = N_BITS) -> LbpBinTable:
    return LbpBinTable(n_bits)


def lbp_histogram(cube: Cube, pooled: bool = True) -> np.ndarray:
    """Normalised uniform-LBP histogram over all channels of ``cube``.

    With ``pooled`` (the default) the codes of every channel go into one
    histogram of ``lbp_bin_table().n_bins`` bins; otherwise one histogram per
    channel is computed and the results are concatenated.
    """
    if cube.edge < 3:
        raise ShapeError(f"cube edge {cube.edge} < 3")
    table = lbp_bin_table()
    hists = [
        np.bincount(table.lookup(lbp_codes(ch)).ravel(), minlength=table.n_bins).astype(np.float64)
        for ch in cube.channels
    ]
    if pooled:
        hists = [np.sum(hists, axis=0)]
    return np.concatenate([h / h.sum() if h.sum() > 0 else h for h in hists])


def hog_gradient_field(channel: np.ndarray) -> np.ndarray:
    """Per-voxel response to the three axis filters ``[1, 0, -2, 0, 1]``.

    Only voxels with a full 5x5x5 neighbourhood are kept, so the result has
    shape ``(E-4, E-4, E-4, 3)``. Note the filter is a second difference, so a
    linear ramp gives zero and a quadratic gives a constant.
    """
    v = np.asarray(channel, dtype=np.float64)
    if v.ndim != 3 or min(v.shape) < 5:
        raise ShapeError(f"need a 3D block with every side >= 5, got {v.shape}")
    nx, ny, nz = v.shape
    core = (slice(2, nx - 2), slice(2, ny - 2), slice(2, nz - 2))
    out = np.zeros((nx - 4, ny - 4, nz - 4, 3))
    for axis in range(3):
        for t, coef in enumerate(HOG_KERNEL):
            if coef == 0:
                continue
            sl = list(core)
            sl[axis] = slice(t, v.shape[axis] - 4 + t)
            out[..., axis] += coef * v[tuple(sl)]
    return out


@lru_cache(maxsize=None)
def _icosahedron_axes() -> np.ndarray:
    phi = (1 + 5 ** 0.5) / 2
    # face normals of the icosahedron = vertices of the dual dodecahedron
    verts = [np.array(p, dtype=float) for p in itertools.product((-1, 1), repeat=3)]
    for a, b in itertools.product((-1, 1), repeat=2):
        verts += [np.array([0, a / phi, b * phi]), np.array([a / phi, b * phi, 0]),
                  np.array([b * phi, 0, a / phi])]
    axes = []
    for v in verts:
        v = v / np.linalg.norm(v)
        lead = v[np.flatnonzero(np.abs(v) > 1e-12)[0]]
        v = v if lead > 0 else -v
        if not any(np.allclose(v, u) for u in axes):
            axes.append(v)
    axes.sort(key=lambda u: tuple(-u))
    out = np.array(axes)
    out.setflags(write=False)
    return out


def icosahedron_axes() -> np.ndarray:
    """The 10 orientation axes (opposite face normals merged), shape (10, 3)."""
    return _icosahedron_axes().copy()


def hog_channel_histogram(channel: np.ndarray) -> np.ndarray:
    grad = hog_gradient_field(channel).reshape(-1, 3)
    mag = np.linalg.norm(grad, axis=1)
    # argmax picks the lowest axis index on ties
    bins = np.argmax(np.abs(grad @ _icosahedron_axes().T), axis=1)
    hist = np.bincount(bins, weights=mag, minlength=HOG_BINS)
    total = hist.sum()
    return hist / total if total > 0 else hist


def hog_histogram(cube: Cube) -> np.ndarray:
    """Magnitude-weighted orientation histogram, 10 bins per channel, concatenated."""
    if cube.edge < 5:
        raise ShapeError(f"cube edge {cube.edge} < 5")
    return np.concatenate([hog_channel_histogram(ch) for ch in cube.channels])
