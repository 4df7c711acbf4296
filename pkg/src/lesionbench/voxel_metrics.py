"""Whole-mask metrics: DSC variants, volumetric similarity, NSD and volume agreement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import BothEmpty, EmptyReference
from .volume_io import GridGeometry, LabelVolume

__all__ = [
    "NsdConfig",
    "RatioConfig",
    "dsc",
    "dsc_all",
    "volumetric_similarity",
    "boundary",
    "nsd",
    "volume_difference",
    "volume_ratio",
]


@dataclass(frozen=True)
class RatioConfig:
    epsilon_ml: float = 0.012

    def __post_init__(self):
        if not self.epsilon_ml > 0:
            raise ValueError("epsilon_ml must be > 0")


@dataclass(frozen=True)
class NsdConfig:
    """Surface tolerance, in voxel index units unless ``in_mm`` is set."""

    tolerance: float = 1.0
    in_mm: bool = False

    def __post_init__(self):
        if not self.tolerance >= 0:
            raise ValueError("tolerance must be >= 0")


def _pair(G: LabelVolume, P: LabelVolume):
    G.geometry.check_same(P.geometry)
    return G.voxels, P.voxels


def dsc(G: LabelVolume, P: LabelVolume) -> float:
    """Dice on a lesion-positive reference; empty references go to the FPV-only path."""
    g, p = _pair(G, P)
    ng = int(np.count_nonzero(g))
    if ng == 0:
        raise EmptyReference("DSC is undefined for an empty reference")
    inter = int(np.count_nonzero(g & p))
    return 2.0 * inter / (ng + int(np.count_nonzero(p)))


def dsc_all(G: LabelVolume, P: LabelVolume, both_empty: float = 1.0) -> float:
    """Dice over all samples: an empty reference scores ``both_empty`` when the
    prediction is empty too and 0 otherwise."""
    g, p = _pair(G, P)
    if not g.any():
        return float(both_empty) if not p.any() else 0.0
    return dsc(G, P)


def volumetric_similarity(G: LabelVolume, P: LabelVolume) -> float:
    g, p = _pair(G, P)
    ng, np_ = int(np.count_nonzero(g)), int(np.count_nonzero(p))
    if ng + np_ == 0:
        raise BothEmpty("volumetric similarity is undefined for two empty masks")
    return 1.0 - abs(ng - np_) / (ng + np_)


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with at least one face neighbour in the background;
    outside the grid counts as background."""
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = m.copy()
    for axis in range(3):
        for step in (-1, 1):
            interior &= np.roll(padded, step, axis=axis)[1:-1, 1:-1, 1:-1]
    return m & ~interior


def _distances_to(target: np.ndarray, query: np.ndarray, sampling) -> np.ndarray:
    """Euclidean distance from every ``query`` voxel to the nearest ``target`` voxel."""
    both = target | query
    idx = np.nonzero(both)
    box = tuple(slice(int(i.min()), int(i.max()) + 1) for i in idx)
    # cropping is exact: all target voxels lie inside the box
    dist = ndimage.distance_transform_edt(~target[box], sampling=sampling)
    return dist[query[box]]


def nsd(G: LabelVolume, P: LabelVolume, cfg: NsdConfig = NsdConfig()) -> float:
    g, p = _pair(G, P)
    if not g.any():
        raise EmptyReference("NSD is undefined for an empty reference")
    if not p.any():
        return 0.0
    bg, bp = boundary(g), boundary(p)
    sampling = G.geometry.spacing if cfg.in_mm else None
    d_g = _distances_to(bp, bg, sampling)
    d_p = _distances_to(bg, bp, sampling)
    hits = int(np.count_nonzero(d_g <= cfg.tolerance)) + int(np.count_nonzero(d_p <= cfg.tolerance))
    return hits / (d_g.size + d_p.size)


def volume_difference(G: LabelVolume, P: LabelVolume, geometry: GridGeometry | None = None) -> float:
    """Signed predicted minus reference volume in mL."""
    g, p = _pair(G, P)
    geometry = geometry or G.geometry
    return (int(np.count_nonzero(p)) - int(np.count_nonzero(g))) * geometry.voxel_volume_ml


def volume_ratio(G: LabelVolume, P: LabelVolume, geometry: GridGeometry | None = None,
                 cfg: RatioConfig = RatioConfig()) -> float:
    g, p = _pair(G, P)
    geometry = geometry or G.geometry
    v = geometry.voxel_volume_ml
    return (int(np.count_nonzero(p)) * v + cfg.epsilon_ml) / (int(np.count_nonzero(g)) * v + cfg.epsilon_ml)
