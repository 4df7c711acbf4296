"""Seeded synthetic PET-like phantoms with degraded "algorithm" predictions.

Used as a stand-in for patient data in tests, the acceptance suite and the
``synth`` CLI command.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import PlacementFailure
from .ranking import SUBSETS
from .volume_io import GridGeometry, IntensityVolume, LabelVolume, save_volume

__all__ = ["SynthParams", "SynthCase", "synth_reference", "degrade", "synth_case", "synth_challenge"]

_BALL26 = np.ones((3, 3, 3), dtype=bool)
_FACE6 = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class SynthParams:
    dims: tuple[int, int, int] = (40, 40, 24)
    spacing: tuple[float, float, float] = (2.0, 2.0, 3.0)
    lesion_count: tuple[int, int] = (1, 4)
    radius_mm: tuple[float, float] = (3.0, 9.0)
    negative_prob: float = 0.2
    background: float = 1.0
    uptake: tuple[float, float] = (2.0, 12.0)
    # prediction degradation
    dilate: int = 0
    erode: int = 0
    drop_prob: float = 0.0
    marginal_prob: float = 0.0
    spurious_rate: float = 0.0
    spurious_radius_mm: tuple[float, float] = (2.0, 4.0)
    max_retries: int = 200
    seed: int = 0

    def __post_init__(self):
        for name in ("dims", "spacing", "lesion_count", "radius_mm", "uptake", "spurious_radius_mm"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        GridGeometry(self.dims, self.spacing)
        lo, hi = self.lesion_count
        if not 0 <= lo <= hi:
            raise ValueError("lesion_count must satisfy 0 <= lo <= hi")
        for name in ("radius_mm", "uptake", "spurious_radius_mm"):
            a, b = getattr(self, name)
            if not 0 < a <= b:
                raise ValueError(f"{name} must satisfy 0 < lo <= hi")
        for name in ("negative_prob", "drop_prob", "marginal_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.dilate < 0 or self.erode < 0 or self.spurious_rate < 0:
            raise ValueError("degradation steps and rates must be >= 0")

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(self.dims, self.spacing)

    @classmethod
    def from_dict(cls, d: dict) -> SynthParams:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth parameters {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True, eq=False)
class SynthCase:
    reference: LabelVolume
    intensity: IntensityVolume
    prediction: LabelVolume
    spurious_sizes: tuple[int, ...] = field(default=())


def _ellipsoid(geometry: GridGeometry, center, semi_mm) -> tuple[np.ndarray, np.ndarray]:
    """Boolean ellipsoid and its normalised radius field (0 at the centre)."""
    grids = np.meshgrid(*(np.arange(n) for n in geometry.dims), indexing="ij", sparse=True)
    r2 = sum(((g - c) * s / a) ** 2 for g, c, s, a in zip(grids, center, geometry.spacing, semi_mm))
    inside = r2 <= 1.0
    inside[tuple(int(round(c)) for c in center)] = True
    return inside, r2


def _place(geometry: GridGeometry, occupied: np.ndarray, semi_mm, rng, retries: int):
    semi_vox = np.asarray(semi_mm) / np.asarray(geometry.spacing)
    halo = ndimage.binary_dilation(occupied, _BALL26) if occupied.any() else occupied
    for _ in range(retries):
        lo = np.ceil(semi_vox).astype(int)
        hi = np.asarray(geometry.dims) - 1 - lo
        if (hi < lo).any():
            lo = np.zeros(3, dtype=int)
            hi = np.asarray(geometry.dims) - 1
        center = rng.integers(lo, hi + 1) + rng.uniform(-0.5, 0.5, 3)
        center = np.clip(center, 0, np.asarray(geometry.dims) - 1)
        blob, r2 = _ellipsoid(geometry, center, semi_mm)
        if not (blob & halo).any():
            return blob, r2
    raise PlacementFailure(f"could not place a lesion after {retries} attempts")


def synth_reference(params: SynthParams, rng: np.random.Generator) -> tuple[LabelVolume, IntensityVolume]:
    geometry = params.geometry
    ref = np.zeros(geometry.dims, dtype=bool)
    intensity = np.full(geometry.dims, float(params.background))
    n = 0 if rng.random() < params.negative_prob else int(rng.integers(params.lesion_count[0], params.lesion_count[1] + 1))
    for _ in range(n):
        semi = rng.uniform(*params.radius_mm, size=3)
        blob, r2 = _place(geometry, ref, semi, rng, params.max_retries)
        peak = rng.uniform(*params.uptake)
        profile = np.clip(1.0 - 0.5 * r2, 0.5, 1.0)
        intensity = np.where(blob, params.background + peak * profile, intensity)
        ref |= blob
    return LabelVolume(geometry, ref), IntensityVolume(geometry, intensity)


def _shift_x(blob: np.ndarray, shift: int) -> np.ndarray:
    out = np.zeros_like(blob)
    if shift >= 0:
        out[shift:] = blob[: blob.shape[0] - shift]
    else:
        out[:shift] = blob[-shift:]
    return out


def degrade(reference: LabelVolume, params: SynthParams, rng: np.random.Generator) -> tuple[LabelVolume, tuple[int, ...]]:
    """Derive a prediction from ``reference``.

    Per lesion: drop with ``drop_prob``, otherwise with ``marginal_prob`` shift
    it along x so only one slab still overlaps. Then dilate/erode, then inject
    Poisson(``spurious_rate``) isolated spheres whose sizes are returned.
    """
    geometry = reference.geometry
    labels, n = ndimage.label(reference.voxels, structure=_BALL26)
    pred = np.zeros(geometry.dims, dtype=bool)
    for k in range(1, n + 1):
        blob = labels == k
        u_drop, u_marg, u_dir = rng.random(3)
        if u_drop < params.drop_prob:
            continue
        if u_marg < params.marginal_prob:
            xs = np.flatnonzero(blob.any(axis=(1, 2)))
            width = int(xs[-1] - xs[0] + 1)
            room_hi = geometry.dims[0] - 1 - int(xs[-1])
            room_lo = int(xs[0])
            step = max(width - 1, 0)
            if u_dir < 0.5 and room_hi >= step or room_lo < step:
                step = min(step, room_hi)
            else:
                step = -min(step, room_lo)
            blob = _shift_x(blob, step)
        pred |= blob
    if params.dilate:
        pred = ndimage.binary_dilation(pred, _FACE6, iterations=params.dilate)
    if params.erode:
        pred = ndimage.binary_erosion(pred, _FACE6, iterations=params.erode)
    sizes = []
    for _ in range(int(rng.poisson(params.spurious_rate)) if params.spurious_rate > 0 else 0):
        radius = rng.uniform(*params.spurious_radius_mm)
        blob, _ = _place(geometry, reference.voxels | pred, (radius,) * 3, rng, params.max_retries)
        sizes.append(int(blob.sum()))
        pred |= blob
    return LabelVolume(geometry, pred), tuple(sizes)


def synth_case(params: SynthParams) -> SynthCase:
    """Reference, intensity and degraded prediction; a pure function of ``params``."""
    ref_rng, pred_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(params.seed).spawn(2))
    reference, intensity = synth_reference(params, ref_rng)
    prediction, sizes = degrade(reference, params, pred_rng)
    return SynthCase(reference, intensity, prediction, sizes)


def synth_challenge(params: SynthParams, algorithms: dict[str, dict] | None, cases_per_subset: int,
                    out_dir, seed: int | None = None, fmt: str = "nifti1") -> Path:
    """Write a synthetic challenge (volumes + manifest.json) and return the manifest path.

    ``algorithms`` maps names to degradation overrides of ``params``.
    """
    out = Path(out_dir)
    seed = params.seed if seed is None else int(seed)
    algorithms = algorithms or {"baseline": {}}
    ext = ".nii" if fmt == "nifti1" else ".raw"
    entries = []
    case_no = 0
    for subset in SUBSETS:
        for i in range(cases_per_subset):
            case_id = f"{subset}_{i:03d}"
            case_dir = out / case_id
            case_dir.mkdir(parents=True, exist_ok=True)
            ref_rng = np.random.default_rng(np.random.SeedSequence([seed, case_no, 0]))
            reference, intensity = synth_reference(params, ref_rng)
            save_volume(case_dir / f"reference{ext}", reference, fmt)
            save_volume(case_dir / f"suv{ext}", intensity, fmt)
            preds = {}
            for a, (name, overrides) in enumerate(sorted(algorithms.items())):
                rng = np.random.default_rng(np.random.SeedSequence([seed, case_no, a + 1]))
                pred, _ = degrade(reference, replace(params, **overrides), rng)
                fname = f"pred_{a:02d}{ext}"
                save_volume(case_dir / fname, pred, fmt)
                preds[name] = f"{case_id}/{fname}"
            entries.append({
                "case_id": case_id,
                "subset": subset,
                "reference": f"{case_id}/reference{ext}",
                "intensity": f"{case_id}/suv{ext}",
                "predictions": preds,
            })
            case_no += 1
    manifest = {"schema_version": 1, "cases": entries}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
