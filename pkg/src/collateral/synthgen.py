"""Seeded synthetic perfusion phantoms (T_max, rBF, rBV) with a planted lesion.

The phantoms stand in for patient data. Each one is a brain-shaped ellipsoid
filled with smooth value noise, zero outside (as after skull stripping), and an
ellipsoidal lesion whose contrast depends on the collateral grade: grade 0
(bad collaterals) has the strongest T_max elevation and perfusion deficit,
grade 2 (good collaterals) is nearly uniform.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import SpecError
from .volume import CubeState, Volume3D, save_vvol

GRADES = (0, 1, 2)
TMAX_CONTRAST = (3.0, 2.0, 1.15)
RBF_CONTRAST = (0.3, 0.55, 0.9)
RBV_CONTRAST = (0.3, 0.55, 0.9)


@dataclass(frozen=True)
class PhantomSpec:
    seed: int
    grade: int
    lesion_center: tuple[float, float, float]
    lesion_radii: tuple[float, float, float]
    dims: tuple[int, int, int] = (128, 128, 128)
    edge: int = 64
    brain_radii_frac: tuple[float, float, float] = (0.42, 0.45, 0.40)
    tmax_contrast: tuple[float, ...] = TMAX_CONTRAST
    rbf_contrast: tuple[float, ...] = RBF_CONTRAST
    rbv_contrast: tuple[float, ...] = RBV_CONTRAST
    noise_amplitude: float = 0.2
    speckle: float = 0.02
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.grade not in GRADES:
            raise SpecError(f"grade must be 0, 1 or 2, got {self.grade}")
        if any(n < 1 for n in self.dims) or self.edge > min(self.dims):
            raise SpecError(f"edge {self.edge} does not fit dims {self.dims}")
        if min(self.lesion_radii) <= 0:
            raise SpecError("lesion radii must be positive")

    @property
    def brain_center(self) -> np.ndarray:
        return (np.asarray(self.dims, dtype=float) - 1) / 2

    @property
    def brain_radii(self) -> np.ndarray:
        return np.asarray(self.dims, dtype=float) * np.asarray(self.brain_radii_frac)


@dataclass
class Phantom:
    tmax: Volume3D
    rbf: Volume3D
    rbv: Volume3D
    roi: CubeState
    label: int
    spec: PhantomSpec | None = field(default=None, repr=False)

    @property
    def volumes(self) -> tuple[Volume3D, Volume3D, Volume3D]:
        return (self.tmax, self.rbf, self.rbv)


def _grid(dims):
    return np.meshgrid(*(np.arange(n, dtype=np.float32) for n in dims), indexing="ij", sparse=True)


def _ellipsoid(dims, center, radii) -> np.ndarray:
    x, y, z = _grid(dims)
    c, r = center, radii
    return ((x - c[0]) / r[0]) ** 2 + ((y - c[1]) / r[1]) ** 2 + ((z - c[2]) / r[2]) ** 2 <= 1.0


def value_noise(rng: np.random.Generator, dims, cells=(4, 8), weights=(1.0, 0.5)) -> np.ndarray:
    """Two-octave value noise in roughly [-1, 1], trilinearly interpolated."""
    out = np.zeros(dims, dtype=np.float32)
    for n_cells, w in zip(cells, weights):
        lattice = rng.uniform(-1, 1, size=(n_cells + 1,) * 3)
        up = ndimage.zoom(lattice, [d / (n_cells + 1) for d in dims], order=1, grid_mode=False)
        out += w * up[: dims[0], : dims[1], : dims[2]].astype(np.float32)
    return out / sum(weights)


def roi_for_lesion(center, dims, edge) -> CubeState:
    """The edge-sized cube centred on the lesion, clamped into the volume."""
    corner = [
        int(np.clip(int(round(c)) - edge // 2, 0, n - edge)) for c, n in zip(center, dims)
    ]
    return CubeState(tuple(corner), edge)


def gen_phantom(spec: PhantomSpec) -> Phantom:
    dims = tuple(spec.dims)
    brain = _ellipsoid(dims, spec.brain_center, spec.brain_radii)
    lesion = _ellipsoid(dims, spec.lesion_center, spec.lesion_radii)
    if not lesion.any():
        raise SpecError("lesion covers no voxel")
    if np.any(lesion & ~brain):
        raise SpecError("lesion extends outside the brain ellipsoid")

    rng = np.random.default_rng(spec.seed)
    g = spec.grade
    maps = []
    for contrast in (spec.tmax_contrast, spec.rbf_contrast, spec.rbv_contrast):
        field_ = 1.0 + spec.noise_amplitude * value_noise(rng, dims)
        if spec.speckle:
            field_ += rng.normal(0.0, spec.speckle, size=dims).astype(np.float32)
        field_ = np.where(lesion, field_ * np.float32(contrast[g]), field_)
        maps.append(np.where(brain, np.maximum(field_, 0), 0).astype(np.float32))

    roi = roi_for_lesion(spec.lesion_center, dims, spec.edge)
    vols = [Volume3D(m, spec.spacing) for m in maps]
    return Phantom(vols[0], vols[1], vols[2], roi, g, spec)


def _sample_seed(seed: int, grade: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, grade, index]).generate_state(1, np.uint32)[0])


def random_spec(rng: np.random.Generator, seed: int, grade: int, dims=(128, 128, 128),
                edge: int = 64, radius_range=(0.08, 0.14), **kwargs) -> PhantomSpec:
    """Draw a lesion placement that lies inside one hemisphere of the brain."""
    dims = tuple(dims)
    center = (np.asarray(dims, dtype=float) - 1) / 2
    brain_r = np.asarray(dims, dtype=float) * np.asarray(kwargs.get("brain_radii_frac", (0.42, 0.45, 0.40)))
    for _ in range(1000):
        radii = rng.uniform(*radius_range, size=3) * np.asarray(dims)
        radii = np.minimum(radii, edge / 2 - 2)
        offset = rng.uniform(-1, 1, size=3) * brain_r
        # keep the lesion off the midline so that its mirror is healthy tissue
        if abs(offset[0]) < radii[0] + 2:
            continue
        # farthest corner of the lesion bounding box must sit inside the brain
        reach = (np.abs(offset) + radii + 1) / brain_r
        if np.sum(reach ** 2) <= 1.0:
            return PhantomSpec(seed=seed, grade=grade, lesion_center=tuple(center + offset),
                               lesion_radii=tuple(radii), dims=dims, edge=edge, **kwargs)
    raise SpecError("could not place a lesion inside the brain; dims too small?")


def iter_specs(n_per_class, seed: int, dims=(128, 128, 128), edge: int = 64, **kwargs):
    """Yield ``(sample_id, PhantomSpec)`` for each requested phantom, class by class."""
    if any(n < 0 for n in n_per_class):
        raise SpecError(f"class counts must be non-negative, got {n_per_class}")
    n = 0
    for grade, count in enumerate(n_per_class):
        for i in range(count):
            s = _sample_seed(seed, grade, i)
            rng = np.random.default_rng(s)
            yield f"s{n:04d}", random_spec(rng, s, grade, dims, edge, **kwargs)
            n += 1


def gen_dataset(n_per_class, seed: int, dims=(128, 128, 128), edge: int = 64, **kwargs):
    """List of ``(sample_id, Phantom)`` with exactly ``n_per_class[k]`` of grade k."""
    return [(sid, gen_phantom(spec)) for sid, spec in iter_specs(n_per_class, seed, dims, edge, **kwargs)]


def write_dataset(samples, out_dir) -> Path:
    """Write each phantom as three VVOL files plus ``manifest.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.csv"
    with manifest.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label", "roi_x", "roi_y", "roi_z", "edge"])
        for sid, ph in samples:
            for name, vol in zip(("tmax", "rbf", "rbv"), ph.volumes):
                save_vvol(vol, out / f"{sid}_{name}.vvol")
            w.writerow([sid, ph.label, *ph.roi.corner, ph.roi.edge])
    return manifest


def read_manifest(path):
    """Rows of ``(sample_id, label, CubeState)`` from a phantom manifest."""
    rows = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            roi = CubeState((int(row["roi_x"]), int(row["roi_y"]), int(row["roi_z"])), int(row["edge"]))
            rows.append((row["sample_id"], int(row["label"]), roi))
    return rows
