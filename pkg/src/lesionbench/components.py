"""Connected-component labeling, per-component statistics and the
reference x prediction overlap table that every lesion-level metric reads."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import GeometryMismatch
from .volume_io import GridGeometry, IntensityVolume, LabelVolume

__all__ = [
    "CONNECTIVITIES",
    "ComponentLabeling",
    "OverlapTable",
    "ComponentStats",
    "label_components",
    "overlap_table",
    "component_stats",
]

CONNECTIVITIES = (6, 18, 26)
DEFAULT_CONNECTIVITY = 18


def check_connectivity(conn: int) -> int:
    if conn not in CONNECTIVITIES:
        raise ValueError(f"connectivity must be one of {CONNECTIVITIES}, got {conn!r}")
    return int(conn)


@dataclass(frozen=True, eq=False)
class ComponentLabeling:
    """Instance labels, 0 for background and 1..count for components.

    ``sizes[k]`` is the voxel count of label ``k + 1``.
    """

    geometry: GridGeometry
    labels: np.ndarray = field(repr=False)
    count: int
    sizes: np.ndarray
    connectivity: int = DEFAULT_CONNECTIVITY

    def size_of(self, label: int) -> int:
        return int(self.sizes[label - 1])

    @property
    def volumes_ml(self) -> np.ndarray:
        return self.sizes * self.geometry.voxel_volume_ml


def label_components(mask: LabelVolume, conn: int = DEFAULT_CONNECTIVITY, backend: str | None = None) -> ComponentLabeling:
    """Label the foreground of ``mask``.

    Labels are numbered by the first voxel of each component in x-fastest scan
    order, so the result is reproducible bit for bit across backends.
    """
    conn = check_connectivity(conn)
    kernels = _kernels.get_backend(backend)
    nx, ny, nz = mask.geometry.dims
    flat = np.ascontiguousarray(mask.voxels.reshape(-1, order="F"), dtype=np.uint8)
    flat_labels, count = kernels.label_flat(flat, nx, ny, nz, conn)
    labels = np.asarray(flat_labels, dtype=np.int32).reshape((nx, ny, nz), order="F")
    sizes = np.bincount(flat_labels, minlength=count + 1)[1:].astype(np.int64)
    return ComponentLabeling(mask.geometry, labels, int(count), sizes, conn)


@dataclass(frozen=True, eq=False)
class OverlapTable:
    """Sparse intersection counts between reference and prediction components.

    ``ref_ids``/``pred_ids`` are 1-based labels; only overlapping pairs are
    stored, sorted by (ref, pred).
    """

    n_ref: int
    n_pred: int
    ref_ids: np.ndarray
    pred_ids: np.ndarray
    inter: np.ndarray
    ref_sizes: np.ndarray
    pred_sizes: np.ndarray
    voxel_volume_ml: float

    def __post_init__(self):
        for name in ("ref_ids", "pred_ids", "inter", "ref_sizes", "pred_sizes"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        if len(self.ref_sizes) != self.n_ref or len(self.pred_sizes) != self.n_pred:
            raise ValueError("size arrays disagree with component counts")

    @property
    def entries(self) -> dict[tuple[int, int], int]:
        return {(int(i), int(l)): int(c) for i, l, c in zip(self.ref_ids, self.pred_ids, self.inter)}

    def iou(self) -> np.ndarray:
        """IoU of every stored pair, aligned with ``inter``."""
        union = self.ref_sizes[self.ref_ids - 1] + self.pred_sizes[self.pred_ids - 1] - self.inter
        return self.inter / union

    def transposed(self) -> OverlapTable:
        order = np.lexsort((self.ref_ids, self.pred_ids))
        return OverlapTable(
            self.n_pred, self.n_ref,
            self.pred_ids[order], self.ref_ids[order], self.inter[order],
            self.pred_sizes, self.ref_sizes, self.voxel_volume_ml,
        )

    def to_dict(self) -> dict:
        return {
            "n_ref": self.n_ref,
            "n_pred": self.n_pred,
            "voxel_volume_ml": self.voxel_volume_ml,
            "ref_sizes": self.ref_sizes.tolist(),
            "pred_sizes": self.pred_sizes.tolist(),
            "pairs": [[int(i), int(l), int(c)] for i, l, c in zip(self.ref_ids, self.pred_ids, self.inter)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> OverlapTable:
        pairs = np.asarray(d["pairs"], dtype=np.int64).reshape(-1, 3)
        return cls(
            int(d["n_ref"]), int(d["n_pred"]),
            pairs[:, 0], pairs[:, 1], pairs[:, 2],
            d["ref_sizes"], d["pred_sizes"], float(d["voxel_volume_ml"]),
        )


def overlap_table(ref: ComponentLabeling, pred: ComponentLabeling, backend: str | None = None) -> OverlapTable:
    if ref.geometry != pred.geometry:
        raise GeometryMismatch(f"geometry mismatch: {ref.geometry} vs {pred.geometry}")
    kernels = _kernels.get_backend(backend)
    r = np.ascontiguousarray(ref.labels.reshape(-1, order="F"), dtype=np.int32)
    p = np.ascontiguousarray(pred.labels.reshape(-1, order="F"), dtype=np.int32)
    ref_ids, pred_ids, inter = kernels.overlap_flat(r, p, pred.count)
    return OverlapTable(
        ref.count, pred.count, ref_ids, pred_ids, inter,
        ref.sizes, pred.sizes, ref.geometry.voxel_volume_ml,
    )


@dataclass(frozen=True, eq=False)
class ComponentStats:
    """Per-component volume, optional SUVmax and inclusive bounding box.

    ``bbox[k]`` is ``(x0, x1, y0, y1, z0, z1)`` for label ``k + 1``.
    """

    volume_ml: np.ndarray
    suv_max: np.ndarray | None
    bbox: np.ndarray

    def __len__(self):
        return len(self.volume_ml)


def component_stats(labeling: ComponentLabeling, intensity: IntensityVolume | None = None) -> ComponentStats:
    if intensity is not None and intensity.geometry != labeling.geometry:
        raise GeometryMismatch(f"geometry mismatch: {labeling.geometry} vs {intensity.geometry}")
    n = labeling.count
    volume = labeling.sizes * labeling.geometry.voxel_volume_ml
    bbox = np.zeros((n, 6), dtype=np.int64)
    suv = None
    if n == 0:
        return ComponentStats(volume, None if intensity is None else np.zeros(0), bbox)
    idx = np.nonzero(labeling.labels)
    lab = labeling.labels[idx] - 1
    for axis in range(3):
        lo = np.full(n, np.iinfo(np.int64).max)
        hi = np.full(n, -1, dtype=np.int64)
        np.minimum.at(lo, lab, idx[axis])
        np.maximum.at(hi, lab, idx[axis])
        bbox[:, 2 * axis] = lo
        bbox[:, 2 * axis + 1] = hi
    if intensity is not None:
        suv = np.full(n, -np.inf)
        np.maximum.at(suv, lab, intensity.voxels[idx])
    return ComponentStats(volume, suv, bbox)
