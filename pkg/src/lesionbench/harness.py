"""Manifest ingestion, per-case evaluation fan-out and majority-vote ensembling."""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np
import pandas as pd

from .components import (
    DEFAULT_CONNECTIVITY,
    check_connectivity,
    component_stats,
    label_components,
    overlap_table,
)
from .errors import (
    DuplicateCase,
    EmptyPopulation,
    GeometryMismatch,
    LesionBenchError,
    MissingFile,
    SchemaViolation,
    TooFewMasks,
)
from .lesion_metrics import (
    ONE_VOXEL,
    MatchCriterion,
    _check_taus,
    cc_dsc,
    default_taus,
    detection_flags,
    error_taxonomy,
    fnv,
    fpv,
    panoptic,
)
from .volume_io import IntensityVolume, LabelVolume, load_intensity, load_label
from .voxel_metrics import (
    NsdConfig,
    RatioConfig,
    dsc,
    dsc_all,
    nsd,
    volume_difference,
    volume_ratio,
    volumetric_similarity,
)

__all__ = [
    "CaseEntry",
    "CaseManifest",
    "EvaluationConfig",
    "CaseMetrics",
    "EvaluationResult",
    "load_manifest",
    "parse_taus",
    "evaluate_case",
    "evaluate_all",
    "majority_vote",
    "WORKERS_ENV",
]

WORKERS_ENV = "LESIONBENCH_WORKERS"
MANIFEST_VERSION = 1


def _schema() -> dict:
    return json.loads(resources.files("lesionbench").joinpath("schemas/manifest.schema.json").read_text())


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class CaseEntry:
    case_id: str
    subset: str
    reference: Path
    predictions: dict[str, Path]
    intensity: Path | None = None


@dataclass(frozen=True)
class CaseManifest:
    entries: tuple[CaseEntry, ...]
    schema_version: int = MANIFEST_VERSION

    @property
    def algorithms(self) -> tuple[str, ...]:
        return tuple(sorted({a for e in self.entries for a in e.predictions}))

    def __len__(self):
        return len(self.entries)


def load_manifest(data: bytes | str, base_dir=None, check_files: bool = True) -> CaseManifest:
    """Parse and validate a manifest; relative paths resolve against ``base_dir``."""
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaViolation(f"manifest is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaViolation(f"manifest invalid at {where}: {exc.message}") from exc
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    seen: set[str] = set()
    entries = []
    for c in doc["cases"]:
        if c["case_id"] in seen:
            raise DuplicateCase(f"duplicate case_id {c['case_id']!r}")
        seen.add(c["case_id"])

        def resolve(p: str) -> Path:
            path = base / p
            if check_files and not path.is_file():
                raise MissingFile(f"case {c['case_id']}: {path} not found")
            return path

        entries.append(CaseEntry(
            case_id=c["case_id"],
            subset=c["subset"],
            reference=resolve(c["reference"]),
            predictions={a: resolve(p) for a, p in sorted(c["predictions"].items())},
            intensity=resolve(c["intensity"]) if c.get("intensity") else None,
        ))
    return CaseManifest(tuple(entries), doc["schema_version"])


def read_manifest(path, check_files: bool = True) -> CaseManifest:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"{path} not found")
    return load_manifest(path.read_bytes(), path.parent, check_files)


# ---------------------------------------------------------------------------
# configuration


def parse_taus(text: str) -> list[float]:
    """``"0.01:0.5:0.01"`` (inclusive range) or ``"0.1,0.3,0.5"``."""
    text = text.strip()
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        if step <= 0 or stop < start:
            raise ValueError(f"bad tau range {text!r}")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 10) for i in range(n)]
    return [float(v) for v in text.split(",") if v.strip()]


@dataclass(frozen=True)
class EvaluationConfig:
    connectivity: int = DEFAULT_CONNECTIVITY
    nsd_tolerance: float = 1.0
    nsd_in_mm: bool = False
    ratio_epsilon_ml: float = 0.012
    taus: tuple[float, ...] = field(default_factory=lambda: tuple(default_taus()))
    pq_tau: float = 0.1
    f1_criterion: str = "one_voxel"
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        check_connectivity(self.connectivity)
        object.__setattr__(self, "taus", tuple(_check_taus(list(self.taus))))
        NsdConfig(self.nsd_tolerance, self.nsd_in_mm)
        RatioConfig(self.ratio_epsilon_ml)
        if not 0 < self.pq_tau <= 1:
            raise ValueError("pq_tau must lie in (0, 1]")
        MatchCriterion.parse(self.f1_criterion)
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def nsd_config(self) -> NsdConfig:
        return NsdConfig(self.nsd_tolerance, self.nsd_in_mm)

    @property
    def ratio_config(self) -> RatioConfig:
        return RatioConfig(self.ratio_epsilon_ml)

    @classmethod
    def from_dict(cls, d: dict) -> EvaluationConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SchemaViolation(f"unknown config keys {sorted(unknown)}")
        d = dict(d)
        if isinstance(d.get("taus"), str):
            d["taus"] = parse_taus(d["taus"])
        return cls(**d)

    def with_env(self) -> EvaluationConfig:
        """Apply the worker-count override from the environment, if set."""
        raw = os.environ.get(WORKERS_ENV)
        if not raw:
            return self
        return EvaluationConfig(**{**asdict(self), "workers": int(raw)})


# ---------------------------------------------------------------------------
# per-case evaluation


@dataclass(frozen=True)
class CaseMetrics:
    """One (case, prediction) record. Fields that need a lesion-positive
    reference are None for reference-empty cases."""

    reference_empty: bool
    prediction_empty: bool
    dsc: float | None
    dsc_all: float
    fpv: float
    fnv: float | None
    nsd: float | None
    vs: float | None
    ref_volume_ml: float
    pred_volume_ml: float
    volume_diff_ml: float
    volume_ratio: float
    n_ref: int
    n_pred: int
    detected: int
    matched_pred: int
    detected_pq: int
    cd: int
    fa: int
    df: int
    m: int
    s: int
    sm: int
    pq: float | None
    sq: float | None
    rq: float | None
    cc_dsc: float | None
    f1_tp: int
    f1_fp: int
    f1_fn: int

    def to_dict(self) -> dict:
        return asdict(self)


METRIC_COLUMNS = tuple(f.name for f in fields(CaseMetrics))
ROW_COLUMNS = ("case_id", "subset", "algorithm") + METRIC_COLUMNS + ("error",)


def _evaluate(reference: LabelVolume, prediction: LabelVolume, intensity: IntensityVolume | None,
              cfg: EvaluationConfig, backend: str | None = None):
    """CaseMetrics plus the overlap table and reference component statistics."""
    reference.geometry.check_same(prediction.geometry)
    if intensity is not None:
        reference.geometry.check_same(intensity.geometry)
    ref_cc = label_components(reference, cfg.connectivity, backend)
    pred_cc = label_components(prediction, cfg.connectivity, backend)
    ot = overlap_table(ref_cc, pred_cc, backend)
    positive = not reference.is_empty
    det, matched = detection_flags(ot, ONE_VOXEL)
    tax = error_taxonomy(ot, ONE_VOXEL)
    f1_det, f1_matched = detection_flags(ot, MatchCriterion.parse(cfg.f1_criterion))
    pq = panoptic(ot, cfg.pq_tau) if positive else None
    geometry = reference.geometry
    record = CaseMetrics(
        reference_empty=not positive,
        prediction_empty=prediction.is_empty,
        dsc=dsc(reference, prediction) if positive else None,
        dsc_all=dsc_all(reference, prediction),
        fpv=fpv(ot),
        fnv=fnv(ot) if positive else None,
        nsd=nsd(reference, prediction, cfg.nsd_config) if positive else None,
        vs=volumetric_similarity(reference, prediction) if positive else None,
        ref_volume_ml=reference.count * geometry.voxel_volume_ml,
        pred_volume_ml=prediction.count * geometry.voxel_volume_ml,
        volume_diff_ml=volume_difference(reference, prediction),
        volume_ratio=volume_ratio(reference, prediction, cfg=cfg.ratio_config),
        n_ref=ot.n_ref,
        n_pred=ot.n_pred,
        detected=int(det.sum()),
        matched_pred=int(matched.sum()),
        detected_pq=pq.tp if pq else 0,
        cd=tax.cd, fa=tax.fa, df=tax.df, m=tax.m, s=tax.s, sm=tax.sm,
        pq=pq.pq if pq else None,
        sq=pq.sq if pq else None,
        rq=pq.rq if pq else None,
        cc_dsc=cc_dsc(ref_cc, prediction) if positive else None,
        f1_tp=int(f1_det.sum()),
        f1_fp=ot.n_pred - int(f1_matched.sum()),
        f1_fn=ot.n_ref - int(f1_det.sum()),
    )
    return record, ot, component_stats(ref_cc, intensity)


def evaluate_case(reference: LabelVolume, prediction: LabelVolume, intensity: IntensityVolume | None = None,
                  cfg: EvaluationConfig = EvaluationConfig(), backend: str | None = None) -> CaseMetrics:
    return _evaluate(reference, prediction, intensity, cfg, backend)[0]


# ---------------------------------------------------------------------------
# batch evaluation


@dataclass(frozen=True, eq=False)
class EvaluationResult:
    """Long-format metrics plus, per successful row, the data sweeps need."""

    metrics: pd.DataFrame
    overlaps: list[dict]

    @property
    def n_ok(self) -> int:
        return int((self.metrics["error"] == "").sum())


def _error_row(entry: CaseEntry, algorithm: str, exc: BaseException) -> dict:
    row = {"case_id": entry.case_id, "subset": entry.subset, "algorithm": algorithm}
    row.update({c: None for c in METRIC_COLUMNS})
    row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _evaluate_entry(entry: CaseEntry, cfg: EvaluationConfig) -> list[tuple[dict, dict | None]]:
    try:
        reference = load_label(entry.reference)
        intensity = load_intensity(entry.intensity) if entry.intensity else None
        if intensity is not None:
            reference.geometry.check_same(intensity.geometry)
    except (LesionBenchError, OSError, ValueError) as exc:
        return [(_error_row(entry, a, exc), None) for a in entry.predictions]
    out = []
    for algorithm, path in entry.predictions.items():
        try:
            record, ot, stats = _evaluate(reference, load_label(path), intensity, cfg)
        except (LesionBenchError, OSError, ValueError) as exc:
            out.append((_error_row(entry, algorithm, exc), None))
            continue
        row = {"case_id": entry.case_id, "subset": entry.subset, "algorithm": algorithm}
        row.update(record.to_dict())
        row["error"] = ""
        detail = {
            "case_id": entry.case_id,
            "subset": entry.subset,
            "algorithm": algorithm,
            "connectivity": cfg.connectivity,
            "overlap": ot.to_dict(),
            "ref_volume_ml": stats.volume_ml.tolist(),
            "ref_suv_max": None if stats.suv_max is None else stats.suv_max.tolist(),
        }
        out.append((row, detail))
    return out


def evaluate_all(manifest: CaseManifest, cfg: EvaluationConfig = EvaluationConfig()) -> EvaluationResult:
    """Evaluate every (case, algorithm) pair.

    Failures are recorded in the ``error`` column and do not stop the run.
    Output is sorted by (case_id, algorithm) so it does not depend on the
    worker count or scheduling.
    """
    entries = sorted(manifest.entries, key=lambda e: e.case_id)
    if cfg.workers > 1 and len(entries) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(entries))) as ex:
            results = list(ex.map(_evaluate_entry, entries, [cfg] * len(entries)))
    else:
        results = [_evaluate_entry(e, cfg) for e in entries]
    pairs = sorted((p for r in results for p in r), key=lambda p: (p[0]["case_id"], p[0]["algorithm"]))
    rows = [p[0] for p in pairs]
    df = pd.DataFrame(rows, columns=list(ROW_COLUMNS))
    if not (df["error"] == "").any():
        first = rows[0]["error"] if rows else "manifest has no predictions"
        raise EmptyPopulation(f"no case evaluated successfully (first error: {first})")
    return EvaluationResult(df, [p[1] for p in pairs if p[1] is not None])


# ---------------------------------------------------------------------------
# ensembling


def majority_vote(masks: Sequence[LabelVolume]) -> LabelVolume:
    """Voxel-wise strict majority: foreground where more than half the masks agree."""
    masks = list(masks)
    if len(masks) < 2:
        raise TooFewMasks(f"majority vote needs at least two masks, got {len(masks)}")
    geometry = masks[0].geometry
    counts = np.zeros(geometry.dims, dtype=np.int32)
    for m in masks:
        if m.geometry != geometry:
            raise GeometryMismatch(f"geometry mismatch: {geometry} vs {m.geometry}")
        counts += m.voxels
    return LabelVolume(geometry, 2 * counts > len(masks))
