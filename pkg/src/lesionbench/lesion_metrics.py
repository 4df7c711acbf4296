"""Instance-level metrics built on :class:`~lesionbench.components.OverlapTable`.

One matching kernel (:func:`pair_meets`) drives detection flags, the
sensitivity sweep, the error taxonomy and panoptic quality, so they always
agree on which reference/prediction pairs count as matched.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .components import ComponentLabeling, ComponentStats, OverlapTable
from .errors import EmptyPopulation, EmptyReference, GeometryMismatch, InsufficientPopulation, MissingIntensity
from .voxel_metrics import boundary
from .volume_io import GridGeometry, LabelVolume

__all__ = [
    "MatchCriterion",
    "ONE_VOXEL",
    "TaxonomyCounts",
    "PanopticResult",
    "SweepPoint",
    "DecileReport",
    "fpv",
    "fnv",
    "pair_meets",
    "detection_flags",
    "sensitivity_sweep",
    "error_taxonomy",
    "taxonomy_sweep",
    "panoptic",
    "cc_dsc",
    "pooled_f1",
    "stratified_sensitivity",
    "default_taus",
]

# distances closer than this (relative) count as ties in the Voronoi partition
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class MatchCriterion:
    kind: str = "one_voxel"
    tau: float | None = None

    def __post_init__(self):
        if self.kind == "one_voxel":
            if self.tau is not None:
                raise ValueError("the one-voxel criterion takes no threshold")
        elif self.kind == "iou":
            if self.tau is None or not (0 < self.tau <= 1):
                raise ValueError(f"IoU threshold must be in (0, 1], got {self.tau!r}")
        else:
            raise ValueError(f"unknown criterion kind {self.kind!r}")

    @classmethod
    def iou(cls, tau: float) -> MatchCriterion:
        return cls("iou", float(tau))

    @classmethod
    def parse(cls, text: str) -> MatchCriterion:
        if text in ("one_voxel", "one-voxel", "1vox"):
            return ONE_VOXEL
        return cls.iou(float(text.removeprefix("iou@")))

    @property
    def label(self) -> str:
        return "one_voxel" if self.kind == "one_voxel" else f"iou@{self.tau:g}"


ONE_VOXEL = MatchCriterion()


def default_taus() -> list[float]:
    return [round(0.01 * k, 2) for k in range(1, 51)]


# ---------------------------------------------------------------------------
# volumes


def fpv(ot: OverlapTable) -> float:
    """Volume (mL) of predicted components that touch no reference voxel."""
    touched = np.zeros(ot.n_pred, dtype=bool)
    touched[ot.pred_ids - 1] = True
    return float(ot.pred_sizes[~touched].sum()) * ot.voxel_volume_ml


def fnv(ot: OverlapTable) -> float:
    """Volume (mL) of reference components that no prediction touches."""
    touched = np.zeros(ot.n_ref, dtype=bool)
    touched[ot.ref_ids - 1] = True
    return float(ot.ref_sizes[~touched].sum()) * ot.voxel_volume_ml


# ---------------------------------------------------------------------------
# matching


def pair_meets(ot: OverlapTable, crit: MatchCriterion) -> np.ndarray:
    if crit.kind == "one_voxel":
        return ot.inter >= 1
    return ot.iou() >= crit.tau


def detection_flags(ot: OverlapTable, crit: MatchCriterion = ONE_VOXEL) -> tuple[np.ndarray, np.ndarray]:
    """Per-reference ``detected`` and per-prediction ``matched`` flags.

    Multi-assignment is allowed: one prediction can detect several references.
    """
    ok = pair_meets(ot, crit)
    detected = np.zeros(ot.n_ref, dtype=bool)
    matched = np.zeros(ot.n_pred, dtype=bool)
    detected[ot.ref_ids[ok] - 1] = True
    matched[ot.pred_ids[ok] - 1] = True
    return detected, matched


@dataclass(frozen=True)
class SweepPoint:
    criterion: str
    tau: float | None
    detected: int
    total: int
    sensitivity: float


def _check_taus(taus: Sequence[float]) -> list[float]:
    taus = [float(t) for t in taus]
    if any(not (0 < t <= 0.5) for t in taus):
        raise ValueError("sweep thresholds must lie in (0, 0.5]")
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise ValueError("sweep thresholds must be strictly ascending")
    return taus


def sensitivity_sweep(ots: Iterable[OverlapTable], taus: Sequence[float] | None = None) -> list[SweepPoint]:
    """Pooled lesion sensitivity at the one-voxel criterion followed by each IoU threshold."""
    ots = list(ots)
    taus = _check_taus(default_taus() if taus is None else taus)
    total = sum(ot.n_ref for ot in ots)
    if total == 0:
        raise EmptyPopulation("no reference lesions in the population")
    points = []
    for crit in [ONE_VOXEL] + [MatchCriterion.iou(t) for t in taus]:
        det = sum(int(detection_flags(ot, crit)[0].sum()) for ot in ots)
        points.append(SweepPoint(crit.label, crit.tau, det, total, det / total))
    return points


# ---------------------------------------------------------------------------
# error taxonomy


@dataclass(frozen=True)
class TaxonomyCounts:
    """Association-cluster counts.

    ``cluster_refs``/``cluster_preds`` are the reference and prediction
    components inside merge, split and split-merge clusters.
    """

    cd: int = 0
    fa: int = 0
    df: int = 0
    m: int = 0
    s: int = 0
    sm: int = 0
    cluster_refs: int = 0
    cluster_preds: int = 0

    def __add__(self, other: TaxonomyCounts) -> TaxonomyCounts:
        return TaxonomyCounts(*(a + b for a, b in zip(asdict(self).values(), asdict(other).values())))

    def to_dict(self) -> dict:
        return asdict(self)


def error_taxonomy(ot: OverlapTable, crit: MatchCriterion = ONE_VOXEL) -> TaxonomyCounts:
    ok = pair_meets(ot, crit)
    n = ot.n_ref + ot.n_pred
    if n == 0:
        return TaxonomyCounts()
    rows = ot.ref_ids[ok] - 1
    cols = ot.n_ref + ot.pred_ids[ok] - 1
    graph = coo_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(n, n))
    n_clusters, comp = connected_components(graph, directed=False)
    refs = np.bincount(comp[: ot.n_ref], minlength=n_clusters)
    preds = np.bincount(comp[ot.n_ref:], minlength=n_clusters)
    one_one = (refs == 1) & (preds == 1)
    merge = (preds == 1) & (refs >= 2)
    split = (refs == 1) & (preds >= 2)
    split_merge = (refs >= 2) & (preds >= 2)
    clustered = merge | split | split_merge
    return TaxonomyCounts(
        cd=int(one_one.sum()),
        fa=int(((refs == 0) & (preds == 1)).sum()),
        df=int(((refs == 1) & (preds == 0)).sum()),
        m=int(merge.sum()),
        s=int(split.sum()),
        sm=int(split_merge.sum()),
        cluster_refs=int(refs[clustered].sum()),
        cluster_preds=int(preds[clustered].sum()),
    )


def taxonomy_sweep(ots: Iterable[OverlapTable], taus: Sequence[float] | None = None) -> list[tuple[str, TaxonomyCounts]]:
    """Pooled taxonomy counts at the one-voxel criterion and each IoU threshold."""
    ots = list(ots)
    taus = _check_taus(default_taus() if taus is None else taus)
    out = []
    for crit in [ONE_VOXEL] + [MatchCriterion.iou(t) for t in taus]:
        total = TaxonomyCounts()
        for ot in ots:
            total = total + error_taxonomy(ot, crit)
        out.append((crit.label, total))
    return out


# ---------------------------------------------------------------------------
# panoptic quality and F1


@dataclass(frozen=True)
class PanopticResult:
    pq: float
    sq: float
    rq: float
    tp: int
    fp: int
    fn: int


def panoptic(ot: OverlapTable, tau: float = 0.1) -> PanopticResult:
    """PQ/SQ/RQ with multi-assignment allowed.

    A reference is a TP if any prediction reaches IoU >= tau; its SQ
    contribution is the best such IoU.
    """
    if not (0 < tau <= 1):
        raise ValueError(f"tau must be in (0, 1], got {tau!r}")
    iou = ot.iou()
    ok = iou >= tau
    best = np.zeros(ot.n_ref)
    np.maximum.at(best, ot.ref_ids[ok] - 1, iou[ok])
    detected, matched = detection_flags(ot, MatchCriterion.iou(tau))
    tp = int(detected.sum())
    fn = ot.n_ref - tp
    fp = ot.n_pred - int(matched.sum())
    denom = 2 * tp + fp + fn
    if denom == 0:
        return PanopticResult(0.0, 0.0, 0.0, 0, 0, 0)
    rq = 2 * tp / denom
    sq = float(best[detected].mean()) if tp else 0.0
    return PanopticResult(sq * rq, sq, rq, tp, fp, fn)


def pooled_f1(ots: Iterable[OverlapTable], crit: MatchCriterion = ONE_VOXEL) -> float:
    tp = fp = fn = 0
    for ot in ots:
        detected, matched = detection_flags(ot, crit)
        tp += int(detected.sum())
        fn += ot.n_ref - int(detected.sum())
        fp += ot.n_pred - int(matched.sum())
    if tp + fp + fn == 0:
        raise EmptyPopulation("no reference or predicted components in any case")
    return 2 * tp / (2 * tp + fp + fn)


# ---------------------------------------------------------------------------
# connected-component DSC


def _nearest_component(ref: ComponentLabeling, points: np.ndarray) -> np.ndarray:
    """1-based label of the nearest reference component for each voxel index in
    ``points``; equidistant components resolve to the lowest label."""
    spacing = np.asarray(ref.geometry.spacing)
    edge = boundary(ref.labels > 0)
    # a component's nearest voxel to any outside point is always on its surface
    surf = np.argwhere(edge)
    surf_lab = ref.labels[edge]
    q = points * spacing
    dist = np.empty((len(points), ref.count))
    for k in range(ref.count):
        tree = cKDTree(surf[surf_lab == k + 1] * spacing)
        dist[:, k], _ = tree.query(q)
    dmin = dist.min(axis=1, keepdims=True)
    return np.argmax(dist <= dmin * (1 + _TIE_RTOL), axis=1) + 1


def cc_dsc(ref: ComponentLabeling, P: LabelVolume, geometry: GridGeometry | None = None) -> float:
    """Mean per-lesion Dice inside a nearest-reference-component partition of the grid."""
    if geometry is not None and geometry != ref.geometry:
        raise GeometryMismatch(f"geometry mismatch: {geometry} vs {ref.geometry}")
    if ref.geometry != P.geometry:
        raise GeometryMismatch(f"geometry mismatch: {ref.geometry} vs {P.geometry}")
    if ref.count == 0:
        raise EmptyReference("CC-DSC needs at least one reference component")
    p = P.voxels
    inter = np.bincount(ref.labels[p], minlength=ref.count + 1)[1:]
    cell = inter.astype(np.int64)
    outside = p & (ref.labels == 0)
    if outside.any():
        owner = _nearest_component(ref, np.argwhere(outside))
        cell += np.bincount(owner - 1, minlength=ref.count)
    return float(np.mean(2.0 * inter / (ref.sizes + cell)))


# ---------------------------------------------------------------------------
# stratification


@dataclass(frozen=True)
class DecileReport:
    axis: str
    edges: np.ndarray
    counts: np.ndarray
    detected: np.ndarray

    @property
    def sensitivity(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.detected / np.maximum(self.counts, 1), np.nan)

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "edges": self.edges.tolist(),
            "counts": self.counts.tolist(),
            "detected": self.detected.tolist(),
            "sensitivity": [None if np.isnan(s) else float(s) for s in self.sensitivity],
        }


def lesion_population(pairs: Iterable[tuple[OverlapTable, ComponentStats]],
                      crit: MatchCriterion = ONE_VOXEL) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    """Pool reference lesions into ``(volume_ml, suv_max, detected)`` arrays.

    ``suv_max`` is None unless every case carries intensity statistics.
    """
    vols, suvs, dets = [], [], []
    have_suv = True
    for ot, stats in pairs:
        vols.append(stats.volume_ml)
        dets.append(detection_flags(ot, crit)[0])
        if stats.suv_max is None:
            have_suv = False
        else:
            suvs.append(stats.suv_max)
    vol = np.concatenate(vols) if vols else np.zeros(0)
    det = np.concatenate(dets) if dets else np.zeros(0, dtype=bool)
    suv = np.concatenate(suvs) if (have_suv and suvs) else None
    return vol, suv, det


def stratified_sensitivity(values: np.ndarray | None, detected: np.ndarray, axis: str = "volume",
                           n_bins: int = 10) -> DecileReport:
    """Detection sensitivity per quantile bin of ``values``.

    Edges are linear-interpolated quantiles of the pooled values; bins are
    ``[e_k, e_{k+1})`` with the last one closed.
    """
    if values is None:
        raise MissingIntensity(f"no {axis} values supplied (SUVmax needs intensity volumes)")
    values = np.asarray(values, dtype=float)
    detected = np.asarray(detected, dtype=bool)
    if values.shape != detected.shape:
        raise ValueError("values and detection flags differ in length")
    if values.size < n_bins:
        raise InsufficientPopulation(f"need at least {n_bins} lesions, got {values.size}")
    edges = np.quantile(values, np.arange(n_bins + 1) / n_bins, method="linear")
    bins = np.searchsorted(edges[1:-1], values, side="right")
    counts = np.bincount(bins, minlength=n_bins)
    hits = np.bincount(bins, weights=detected, minlength=n_bins).astype(np.int64)
    return DecileReport(axis, edges, counts, hits)
