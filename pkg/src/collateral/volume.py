"""3D scalar volumes, cube geometry and the VVOL file format.

Arrays are indexed ``data[x, y, z]``. Whenever voxels are flattened (files,
cube channels) the x index varies fastest, i.e. Fortran order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import make_interp_spline

from .errors import BoundsError, DataError, FormatError, ResampleError, ShapeError

VVOL_MAGIC = b"VVOL"
VVOL_VERSION = 1
_HEADER = struct.Struct("<4sH3I3f")  # 30 bytes


def _f32(values) -> tuple[float, ...]:
    return tuple(float(np.float32(v)) for v in values)


@dataclass(frozen=True, eq=False)
class Volume3D:
    """A scalar grid with physical voxel spacing in mm.

    ``data`` is stored as float32 so that writing and reading a VVOL file is
    bit exact; spacing is rounded to float32 for the same reason.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeError(f"volume data must be 3D and non-empty, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("volume contains non-finite voxels")
        spacing = _f32(self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise DataError(f"spacing must be three positive values, got {self.spacing}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def __eq__(self, other):
        if not isinstance(other, Volume3D):
            return NotImplemented
        return self.spacing == other.spacing and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class CubeState:
    """Axis-aligned cube given by its low (top-left) corner and edge length."""

    corner: tuple[int, int, int]
    edge: int = 64

    def __post_init__(self):
        corner = tuple(int(c) for c in self.corner)
        if len(corner) != 3 or min(corner) < 0:
            raise BoundsError(f"corner must be three non-negative ints, got {self.corner}")
        if int(self.edge) < 1:
            raise BoundsError(f"edge must be >= 1, got {self.edge}")
        object.__setattr__(self, "corner", corner)
        object.__setattr__(self, "edge", int(self.edge))

    def fits(self, dims) -> bool:
        return all(c + self.edge <= n for c, n in zip(self.corner, dims))

    def contains(self, point) -> bool:
        return all(c <= p < c + self.edge for c, p in zip(self.corner, point))

    @property
    def center(self) -> tuple[float, float, float]:
        return tuple(c + (self.edge - 1) / 2 for c in self.corner)


@dataclass(frozen=True, eq=False)
class Cube:
    """Co-located ``edge**3`` blocks, one per input volume."""

    channels: tuple[np.ndarray, ...]
    edge: int = field(default=0)

    def __post_init__(self):
        channels = tuple(np.asarray(c) for c in self.channels)
        if len(channels) not in (1, 3, 6):
            raise ShapeError(f"cube must have 1, 3 or 6 channels, got {len(channels)}")
        edge = int(self.edge) or channels[0].shape[0]
        for c in channels:
            if c.shape != (edge, edge, edge):
                raise ShapeError(f"channel shape {c.shape} != edge {edge}")
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "edge", edge)

    def array(self) -> np.ndarray:
        """Channels stacked as a ``(C, edge, edge, edge)`` array."""
        return np.stack(self.channels)

    def flat(self, index: int) -> np.ndarray:
        """One channel flattened with x fastest."""
        return self.channels[index].ravel(order="F")

    def __eq__(self, other):
        if not isinstance(other, Cube):
            return NotImplemented
        return len(self.channels) == len(other.channels) and all(
            np.array_equal(a, b) for a, b in zip(self.channels, other.channels)
        )

    __hash__ = None


def save_vvol(vol: Volume3D, path) -> None:
    header = _HEADER.pack(VVOL_MAGIC, VVOL_VERSION, *vol.dims, *vol.spacing)
    payload = vol.data.astype("<f4").ravel(order="F").tobytes()
    Path(path).write_bytes(header + payload)


def load_vvol(path) -> Volume3D:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, nx, ny, nz, sx, sy, sz = _HEADER.unpack_from(raw)
    if magic != VVOL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VVOL_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    count = nx * ny * nz
    if count == 0:
        raise FormatError(f"{path}: zero-sized dims")
    if len(raw) != _HEADER.size + 4 * count:
        raise FormatError(f"{path}: payload is {len(raw) - _HEADER.size} bytes, expected {4 * count}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size, count=count)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: non-finite voxel")
    data = data.reshape((nx, ny, nz), order="F").astype(np.float32)
    return Volume3D(data, (sx, sy, sz))


def resampled_length(n: int, spacing: float, target: float) -> int:
    return int(round((n - 1) * spacing / target)) + 1


def resample_isotropic(vol: Volume3D, target: float) -> Volume3D:
    """Resample to ``target`` mm on every axis with a clamped cubic B-spline.

    Axes already at the target spacing are left untouched, so an isotropic
    input comes back voxel-for-voxel identical.
    """
    if not target > 0:
        raise ResampleError(f"target spacing must be positive, got {target}")
    tgt = float(np.float32(target))
    data = vol.data.astype(np.float64)
    for axis, (n, s) in enumerate(zip(vol.dims, vol.spacing)):
        if s == tgt or n == 1:
            continue
        if target > (n - 1) * s:
            raise ResampleError(f"target {target} mm exceeds extent of axis {axis}")
        m = resampled_length(n, s, target)
        x_old = np.arange(n) * s
        x_new = np.minimum(np.arange(m) * target, x_old[-1])
        spline = make_interp_spline(x_old, data, k=3, bc_type="clamped", axis=axis)
        data = spline(x_new)
    out = data.astype(np.float32)
    if np.ptp(vol.data) == 0:
        # spline evaluation of a constant can drift by an ulp
        out[...] = vol.data.flat[0]
    return Volume3D(out, (tgt, tgt, tgt))


def apply_mask(vol: Volume3D, mask: Volume3D) -> Volume3D:
    if vol.dims != mask.dims:
        raise ShapeError(f"mask dims {mask.dims} != volume dims {vol.dims}")
    return Volume3D(np.where(mask.data > 0.5, vol.data, np.float32(0)), vol.spacing)


def extract_cube(vols, state: CubeState) -> Cube:
    vols = list(vols)
    if not vols:
        raise ShapeError("no volumes given")
    dims = vols[0].dims
    if any(v.dims != dims for v in vols):
        raise ShapeError("volumes differ in dims")
    if not state.fits(dims):
        raise BoundsError(f"cube at {state.corner} edge {state.edge} exceeds dims {dims}")
    x, y, z = state.corner
    e = state.edge
    return Cube(tuple(v.data[x:x + e, y:y + e, z:z + e].copy() for v in vols), e)


def mirror_corner(state: CubeState, dims) -> CubeState:
    """Reflect across the mid-sagittal plane (the x axis)."""
    cx, cy, cz = state.corner
    return CubeState((dims[0] - (cx + state.edge), cy, cz), state.edge)


def normalize_unit(cube: Cube) -> Cube:
    """Min-max scale each channel to [0, 1]; constant channels become zeros."""
    out = []
    for ch in cube.channels:
        ch = ch.astype(np.float32)
        lo, hi = ch.min(), ch.max()
        if hi > lo:
            out.append(np.clip((ch - lo) / (hi - lo), 0, 1).astype(np.float32))
        else:
            out.append(np.zeros_like(ch))
    return Cube(tuple(out), cube.edge)
