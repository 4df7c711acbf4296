"""Report emission: metrics/leaderboard CSVs and JSON for sweeps and bootstrap.

All writers are deterministic: identical inputs give byte-identical files.
"""
from __future__ import annotations

import json
import math
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .components import OverlapTable
from .errors import EmptyPopulation, InsufficientPopulation, IoFailure, MissingIntensity
from .lesion_metrics import (
    ONE_VOXEL,
    default_taus,
    detection_flags,
    sensitivity_sweep,
    stratified_sensitivity,
    taxonomy_sweep,
)
from .ranking import METRICS, BootstrapSummary, RankTable

__all__ = [
    "round_half_even",
    "format_fixed",
    "leaderboard_frame",
    "sweep_report",
    "write_json",
    "write_csv",
    "emit_reports",
]

LEADERBOARD_DECIMALS = 4


def round_half_even(x: float, decimals: int = LEADERBOARD_DECIMALS) -> float:
    """Round the shortest decimal form of ``x`` half-to-even: 8.40625 -> 8.4062."""
    return float(_quantize(x, decimals))


def _quantize(x: float, decimals: int) -> Decimal:
    return Decimal(repr(float(x))).quantize(Decimal(1).scaleb(-decimals), rounding=ROUND_HALF_EVEN)


def format_fixed(x, decimals: int = LEADERBOARD_DECIMALS) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    q = _quantize(x, decimals)
    if q == 0:
        q = abs(q)
    return f"{q:.{decimals}f}"


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if math.isnan(obj) else float(obj)
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def write_csv(path, df: pd.DataFrame) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(path, index=False, lineterminator="\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


# ---------------------------------------------------------------------------
# leaderboard


def leaderboard_frame(table: RankTable, positions: Mapping[str, int | None] | None = None,
                      decimals: int = LEADERBOARD_DECIMALS) -> pd.DataFrame:
    """Per-column scores with ranks, per-metric ranks, weighted rank and position.

    Numbers are formatted to ``decimals`` places (half-even); rows are ordered
    by weighted rank, then name.
    """
    positions = table.positions() if positions is None else positions
    fmt = lambda v: format_fixed(v, decimals)  # noqa: E731
    rows = []
    for k, algo in enumerate(table.algorithms):
        pos = positions.get(algo)
        row = {
            "algorithm": algo,
            "position": "" if pos is None else str(pos),
            "weighted_rank": fmt(table.weighted[k]),
            "final_rank": fmt(table.final_rank[k]),
        }
        for mi, m in enumerate(METRICS):
            for ci, c in enumerate(table.columns):
                row[f"{m}_{c}"] = fmt(table.scores[k, mi, ci])
                row[f"{m}_{c}_rank"] = fmt(table.subset_ranks[k, mi, ci])
            row[f"{m}_rank"] = fmt(table.metric_ranks[k, mi])
        rows.append((table.weighted[k], algo, row))
    rows.sort(key=lambda r: (r[0], r[1]))
    return pd.DataFrame([r[2] for r in rows])


def leaderboard_raw(table: RankTable) -> dict:
    """Unrounded leaderboard values for JSON export."""
    return {
        "method": table.method,
        "weights": dict(zip(METRICS, table.weights.as_array().tolist())),
        "columns": list(table.columns),
        "algorithms": {
            algo: {
                "weighted_rank": float(table.weighted[k]),
                "final_rank": float(table.final_rank[k]),
                "metric_ranks": dict(zip(METRICS, table.metric_ranks[k].tolist())),
                "scores": {m: dict(zip(table.columns, table.scores[k, mi].tolist())) for mi, m in enumerate(METRICS)},
                "ranks": {m: dict(zip(table.columns, table.subset_ranks[k, mi].tolist())) for mi, m in enumerate(METRICS)},
            }
            for k, algo in enumerate(table.algorithms)
        },
    }


# ---------------------------------------------------------------------------
# sweeps


def sweep_report(details: Iterable[dict], taus=None, n_bins: int = 10) -> dict:
    """Per-algorithm sensitivity sweep, taxonomy curve and lesion deciles.

    ``details`` are the per-row overlap records produced by evaluation.
    """
    taus = default_taus() if taus is None else list(taus)
    by_algo: dict[str, list[dict]] = {}
    for d in details:
        by_algo.setdefault(d["algorithm"], []).append(d)
    out = {}
    for algo in sorted(by_algo):
        recs = sorted(by_algo[algo], key=lambda d: d["case_id"])
        ots = [OverlapTable.from_dict(d["overlap"]) for d in recs]
        entry: dict = {"cases": len(recs)}
        try:
            entry["sensitivity"] = [vars(p) for p in sensitivity_sweep(ots, taus)]
        except EmptyPopulation as exc:
            entry["sensitivity"] = []
            entry["sensitivity_note"] = str(exc)
        entry["taxonomy"] = [{"criterion": label, **c.to_dict()} for label, c in taxonomy_sweep(ots, taus)]
        det = np.concatenate([detection_flags(ot, ONE_VOXEL)[0] for ot in ots]) if ots else np.zeros(0, bool)
        vol = np.concatenate([np.asarray(d["ref_volume_ml"], dtype=float) for d in recs]) if recs else np.zeros(0)
        suv = None
        if recs and all(d.get("ref_suv_max") is not None for d in recs):
            suv = np.concatenate([np.asarray(d["ref_suv_max"], dtype=float) for d in recs])
        deciles = {}
        for axis, values in (("volume", vol), ("suv_max", suv)):
            try:
                deciles[axis] = stratified_sensitivity(values, det, axis, n_bins).to_dict()
            except (InsufficientPopulation, MissingIntensity) as exc:
                deciles[axis] = {"axis": axis, "note": str(exc)}
        entry["deciles"] = deciles
        out[algo] = entry
    return {"taus": taus, "algorithms": out}


# ---------------------------------------------------------------------------


def emit_reports(out_dir, metrics: pd.DataFrame | None = None, rank_table: RankTable | None = None,
                 bootstrap: BootstrapSummary | None = None, sweeps: dict | None = None,
                 positions: Mapping[str, int | None] | None = None) -> dict[str, Path]:
    """Write whichever reports are supplied into ``out_dir``; returns their paths."""
    out = Path(out_dir)
    if all(x is None for x in (metrics, rank_table, bootstrap, sweeps)):
        raise ValueError("nothing to emit")
    written: dict[str, Path] = {}
    if metrics is not None:
        if metrics.empty:
            raise ValueError("metrics table is empty")
        written["metrics"] = write_csv(out / "metrics.csv", metrics)
    if rank_table is not None:
        written["leaderboard"] = write_csv(out / "leaderboard.csv", leaderboard_frame(rank_table, positions))
        written["leaderboard_raw"] = write_json(out / "leaderboard.json", leaderboard_raw(rank_table))
    if bootstrap is not None:
        written["bootstrap"] = write_json(out / "bootstrap.json", bootstrap.to_dict())
    if sweeps is not None:
        written["sweep"] = write_json(out / "sweep.json", sweeps)
    return written
