"""Challenge ranking: official weighted subset ranking (R1), the alternative
schemes R2-R5, bootstrap rank stability and patient-level classification.

Per-case data live in a :class:`CaseTable` (algorithms x cases x metrics);
aggregated per-subset values in a :class:`SubsetSummary`. Missing DSC/FNV
(reference-empty cases) are NaN and only enter the FPV aggregate.
"""
from __future__ import annotations

import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .errors import EmptySubset, InsufficientAlgorithms, SchemaViolation, TooFewPairs
from .stats import holm_adjust, wilcoxon_signed_rank

__all__ = [
    "METRICS",
    "SUBSETS",
    "RankWeights",
    "CaseTable",
    "SubsetSummary",
    "RankTable",
    "BootstrapSummary",
    "ClassificationSummary",
    "subset_means",
    "official_ranking",
    "rank_variant",
    "test_then_rank",
    "rank",
    "bootstrap_ranks",
    "classification_summary",
    "default_team",
]

METRICS = ("dsc", "fpv", "fnv")
HIGHER_IS_BETTER = {"dsc": True, "fpv": False, "fnv": False}
SUBSETS = ("FDG_UKT", "PSMA_LMU", "FDG_LMU", "PSMA_UKT")
METHODS = ("R1", "R2", "R3", "R4", "R5")
HOLM_FAMILIES = ("metric_subset", "subset", "all")


@dataclass(frozen=True)
class RankWeights:
    dsc: float = 0.5
    fpv: float = 0.25
    fnv: float = 0.25

    def __post_init__(self):
        w = self.as_array()
        if (w <= 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must be positive and sum to 1, got {tuple(w)}")

    def as_array(self) -> np.ndarray:
        return np.array([self.dsc, self.fpv, self.fnv])

    @classmethod
    def parse(cls, text: str) -> RankWeights:
        """``"dsc,fpv,fnv"`` weights, e.g. ``"0.5,0.25,0.25"``."""
        parts = [float(v) for v in text.split(",")]
        if len(parts) != 3:
            raise ValueError("expected three comma-separated weights (dsc,fpv,fnv)")
        return cls(*parts)


def default_team(algorithm: str) -> str | None:
    """Team of a submission name: ``"IKIM A"`` -> ``"IKIM"``.

    Names starting with ``*`` are reference methods and belong to no team.
    """
    if algorithm.startswith("*"):
        return None
    return re.sub(r"\s+[A-Z]$", "", algorithm.strip())


# ---------------------------------------------------------------------------
# data containers


@dataclass(frozen=True, eq=False)
class CaseTable:
    algorithms: tuple[str, ...]
    case_ids: tuple[str, ...]
    subsets: tuple[str, ...]
    values: np.ndarray  # (K, N, 3) in METRICS order
    subset_order: tuple[str, ...] = SUBSETS

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.algorithms), len(self.case_ids), len(METRICS)):
            raise ValueError(f"values shape {v.shape} does not match table axes")
        object.__setattr__(self, "values", v)
        unknown = set(self.subsets) - set(self.subset_order)
        if unknown:
            raise SchemaViolation(f"unknown subsets {sorted(unknown)}")
        if np.isnan(v[:, :, METRICS.index("fpv")]).any():
            raise SchemaViolation("FPV must be present for every case and algorithm")

    @property
    def subset_index(self) -> dict[str, np.ndarray]:
        subs = np.asarray(self.subsets)
        return {s: np.flatnonzero(subs == s) for s in self.subset_order}

    @classmethod
    def from_frame(cls, df: pd.DataFrame, subset_order: Sequence[str] = SUBSETS) -> CaseTable:
        """Build from long format: one row per (case_id, algorithm) with
        ``subset``, ``dsc``, ``fpv``, ``fnv`` columns."""
        need = {"case_id", "subset", "algorithm", "dsc", "fpv", "fnv"}
        missing = need - set(df.columns)
        if missing:
            raise SchemaViolation(f"metrics table lacks columns {sorted(missing)}")
        if "error" in df.columns:
            bad = df["error"].notna() & (df["error"].astype(str) != "")
            if bad.any():
                raise SchemaViolation(f"{int(bad.sum())} rows carry evaluation errors; fix or drop them before ranking")
        df = df.assign(case_id=df["case_id"].astype(str), algorithm=df["algorithm"].astype(str))
        if df.duplicated(["case_id", "algorithm"]).any():
            raise SchemaViolation("duplicate (case_id, algorithm) rows")
        algorithms = tuple(sorted(df["algorithm"].unique()))
        if df.groupby("case_id")["subset"].nunique().max() > 1:
            raise SchemaViolation("a case is assigned to more than one subset")
        cases = df.drop_duplicates("case_id").sort_values("case_id")
        case_ids = tuple(cases["case_id"])
        subsets = tuple(cases["subset"].astype(str))
        wide = df.set_index(["algorithm", "case_id"])[list(METRICS)].astype(float)
        full = pd.MultiIndex.from_product([algorithms, case_ids])
        if len(wide) != len(full):
            raise SchemaViolation("every algorithm needs a row for every case")
        values = wide.reindex(full).to_numpy().reshape(len(algorithms), len(case_ids), len(METRICS))
        return cls(algorithms, case_ids, subsets, values, tuple(subset_order))

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for k, algo in enumerate(self.algorithms):
            for j, cid in enumerate(self.case_ids):
                rows.append((cid, self.subsets[j], algo, *self.values[k, j]))
        return pd.DataFrame(rows, columns=["case_id", "subset", "algorithm", *METRICS])


@dataclass(frozen=True, eq=False)
class SubsetSummary:
    """Aggregated metric per algorithm, metric and subset: shape (K, 3, S)."""

    algorithms: tuple[str, ...]
    subsets: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.algorithms), len(METRICS), len(self.subsets)):
            raise ValueError(f"summary shape {v.shape} does not match axes")
        object.__setattr__(self, "values", v)

    def get(self, algorithm: str, metric: str, subset: str) -> float:
        return float(self.values[self.algorithms.index(algorithm), METRICS.index(metric), self.subsets.index(subset)])

    @classmethod
    def from_wide(cls, df: pd.DataFrame, subsets: Sequence[str] = SUBSETS,
                  algorithm_col: str = "algorithm") -> SubsetSummary:
        """Read a wide table with ``<metric>_<subset>`` columns."""
        algorithms = tuple(df[algorithm_col].astype(str))
        vals = np.stack(
            [np.stack([df[f"{m}_{s}"].astype(float).to_numpy() for s in subsets], axis=1) for m in METRICS],
            axis=1,
        )
        return cls(algorithms, tuple(subsets), vals)

    def to_wide(self) -> pd.DataFrame:
        data = {"algorithm": list(self.algorithms)}
        for mi, m in enumerate(METRICS):
            for si, s in enumerate(self.subsets):
                data[f"{m}_{s}"] = self.values[:, mi, si]
        return pd.DataFrame(data)


def _aggregate(values: np.ndarray, subsets: Mapping[str, np.ndarray], stat: str) -> np.ndarray:
    """(K, N, 3) case values -> (K, 3, S) per-subset mean or median, NaN-skipping."""
    fn = {"mean": np.nanmean, "median": np.nanmedian}[stat]
    out = np.empty((values.shape[0], len(METRICS), len(subsets)))
    for si, (name, idx) in enumerate(subsets.items()):
        if idx.size == 0:
            raise EmptySubset(f"subset {name} has no cases")
        block = values[:, idx, :]
        present = ~np.isnan(block)
        if not present.any(axis=1).all():
            metric = METRICS[int(np.flatnonzero(~present.any(axis=1).all(axis=0))[0])]
            raise EmptySubset(f"subset {name} has no cases with a defined {metric}")
        out[:, :, si] = fn(block, axis=1)
    return out


def subset_means(cases: CaseTable, algorithm: str | None = None, stat: str = "mean"):
    """Per-subset means of DSC and FNV over lesion-positive cases and of FPV over all cases.

    Returns a :class:`SubsetSummary`, or a ``{metric: {subset: value}}`` dict
    when ``algorithm`` is given.
    """
    summary = SubsetSummary(cases.algorithms, cases.subset_order,
                            _aggregate(cases.values, cases.subset_index, stat))
    if algorithm is None:
        return summary
    k = cases.algorithms.index(algorithm)
    return {m: {s: float(summary.values[k, mi, si]) for si, s in enumerate(summary.subsets)}
            for mi, m in enumerate(METRICS)}


# ---------------------------------------------------------------------------
# rank tables


@dataclass(frozen=True, eq=False)
class RankTable:
    method: str
    algorithms: tuple[str, ...]
    columns: tuple[str, ...]  # subsets, or ("all",) for aggregate-then-rank
    scores: np.ndarray  # (K, 3, C) values that were ranked
    subset_ranks: np.ndarray  # (K, 3, C)
    weights: RankWeights = field(default_factory=RankWeights)

    @property
    def metric_ranks(self) -> np.ndarray:
        return self.subset_ranks.mean(axis=2)

    @property
    def weighted(self) -> np.ndarray:
        return self.metric_ranks @ self.weights.as_array()

    @property
    def final_rank(self) -> np.ndarray:
        """Rank of the weighted score among all rows, average ties."""
        return rankdata(self.weighted, method="average")

    def weighted_of(self, algorithm: str) -> float:
        return float(self.weighted[self.algorithms.index(algorithm)])

    def positions(self, teams: Mapping[str, str | None] | Callable[[str], str | None] = default_team) -> dict[str, int | None]:
        """Leaderboard position per algorithm.

        A team is placed by its best (lowest) weighted rank; only that
        submission carries the position. Algorithms without a team
        (reference methods) get None.
        """
        team_of = teams if callable(teams) else teams.get
        w = self.weighted
        best: dict[str, int] = {}
        for k, algo in enumerate(self.algorithms):
            team = team_of(algo)
            if team is None:
                continue
            if team not in best or w[k] < w[best[team]]:
                best[team] = k
        ordered = sorted(best.items(), key=lambda kv: (w[kv[1]], kv[0]))
        out: dict[str, int | None] = {a: None for a in self.algorithms}
        pos = 0
        prev = None
        for i, (_, k) in enumerate(ordered, start=1):
            if prev is None or w[k] != prev:
                pos = i
            prev = w[k]
            out[self.algorithms[k]] = pos
        return out

    def to_frame(self) -> pd.DataFrame:
        data: dict[str, object] = {"algorithm": list(self.algorithms)}
        for mi, m in enumerate(METRICS):
            for ci, c in enumerate(self.columns):
                data[f"{m}_{c}"] = self.scores[:, mi, ci]
                data[f"{m}_{c}_rank"] = self.subset_ranks[:, mi, ci]
            data[f"{m}_rank"] = self.metric_ranks[:, mi]
        data["weighted_rank"] = self.weighted
        data["final_rank"] = self.final_rank
        return pd.DataFrame(data)


def _rank_block(scores: np.ndarray, higher_better: Sequence[bool]) -> np.ndarray:
    """Average ranks (1 = best) across algorithms for every (metric, column)."""
    ranks = np.empty_like(scores)
    for mi, hb in enumerate(higher_better):
        for ci in range(scores.shape[2]):
            col = scores[:, mi, ci]
            ranks[:, mi, ci] = rankdata(-col if hb else col, method="average")
    return ranks


def _check_k(k: int) -> None:
    if k < 2:
        raise InsufficientAlgorithms(f"ranking needs at least two algorithms, got {k}")


_METRIC_DIRECTIONS = [HIGHER_IS_BETTER[m] for m in METRICS]


def official_ranking(summary: SubsetSummary | CaseTable, weights: RankWeights = RankWeights()) -> RankTable:
    """R1: rank per-subset means within each subset, average the subset ranks
    per metric and combine metrics with the weights. Lower is better."""
    if isinstance(summary, CaseTable):
        summary = subset_means(summary)
    _check_k(len(summary.algorithms))
    ranks = _rank_block(summary.values, _METRIC_DIRECTIONS)
    return RankTable("R1", summary.algorithms, summary.subsets, summary.values, ranks, weights)


def _case_ranks(cases: CaseTable) -> np.ndarray:
    """(K, N, 3) rank of each algorithm on each case; NaN where the metric is undefined."""
    v = cases.values
    out = np.full(v.shape, np.nan)
    for mi, hb in enumerate(_METRIC_DIRECTIONS):
        for j in range(v.shape[1]):
            col = v[:, j, mi]
            ok = ~np.isnan(col)
            if ok.sum() == 0:
                continue
            out[ok, j, mi] = rankdata(-col[ok] if hb else col[ok], method="average")
    return out


def rank_variant(data: SubsetSummary | CaseTable, method: str, weights: RankWeights = RankWeights()) -> RankTable:
    """R2 aggregate-then-rank, R3 median-per-subset, R4 rank-then-aggregate.

    R2 accepts a summary of subset means; R3 and R4 need per-case data.
    """
    if method == "R1":
        return official_ranking(data, weights)
    if method == "R2":
        summary = subset_means(data) if isinstance(data, CaseTable) else data
        _check_k(len(summary.algorithms))
        agg = summary.values.mean(axis=2, keepdims=True)
        return RankTable("R2", summary.algorithms, ("all",), agg, _rank_block(agg, _METRIC_DIRECTIONS), weights)
    if not isinstance(data, CaseTable):
        raise TypeError(f"{method} needs per-case data")
    _check_k(len(data.algorithms))
    if method == "R3":
        med = _aggregate(data.values, data.subset_index, "median")
        return RankTable("R3", data.algorithms, data.subset_order, med, _rank_block(med, _METRIC_DIRECTIONS), weights)
    if method == "R4":
        avg = _aggregate(_case_ranks(data), data.subset_index, "mean")
        # averaged case ranks: lower is better for every metric
        return RankTable("R4", data.algorithms, data.subset_order, avg, _rank_block(avg, [False] * 3), weights)
    if method == "R5":
        return test_then_rank(data, weights)
    raise ValueError(f"unknown ranking method {method!r}")


def _pair_pvalue(a: np.ndarray, b: np.ndarray, higher_better: bool, min_pairs: int) -> float:
    ok = ~(np.isnan(a) | np.isnan(b))
    try:
        return wilcoxon_signed_rank(a[ok], b[ok], "greater" if higher_better else "less", min_pairs=min_pairs)
    except TooFewPairs:
        # not enough informative pairs to claim anything
        return 1.0


def win_counts(cases: CaseTable, alpha: float = 0.05, holm_family: str = "metric_subset",
               min_pairs: int = 5) -> np.ndarray:
    """(K, 3, S) number of opponents each algorithm significantly outperforms."""
    if holm_family not in HOLM_FAMILIES:
        raise ValueError(f"holm_family must be one of {HOLM_FAMILIES}")
    K = len(cases.algorithms)
    subsets = cases.subset_index
    pairs = [(a, b) for a in range(K) for b in range(K) if a != b]
    # raw p-values indexed [metric, subset, pair]
    raw = np.empty((len(METRICS), len(subsets), len(pairs)))
    for mi, hb in enumerate(_METRIC_DIRECTIONS):
        for si, idx in enumerate(subsets.values()):
            block = cases.values[:, idx, mi]
            for pi, (a, b) in enumerate(pairs):
                raw[mi, si, pi] = _pair_pvalue(block[a], block[b], hb, min_pairs)
    adj = np.empty_like(raw)
    if holm_family == "metric_subset":
        for mi in range(raw.shape[0]):
            for si in range(raw.shape[1]):
                adj[mi, si] = holm_adjust(raw[mi, si])
    elif holm_family == "subset":
        for si in range(raw.shape[1]):
            adj[:, si] = holm_adjust(raw[:, si].ravel()).reshape(raw[:, si].shape)
    else:
        adj = holm_adjust(raw.ravel()).reshape(raw.shape)
    wins = np.zeros((K, len(METRICS), len(subsets)))
    for pi, (a, _) in enumerate(pairs):
        wins[a] += adj[:, :, pi] < alpha
    return wins


def test_then_rank(cases: CaseTable, weights: RankWeights = RankWeights(), alpha: float = 0.05,
                   holm_family: str = "metric_subset", min_pairs: int = 5) -> RankTable:
    """R5: rank by the number of opponents beaten in one-sided paired Wilcoxon
    tests (Holm-adjusted), then aggregate as in R1."""
    _check_k(len(cases.algorithms))
    wins = win_counts(cases, alpha, holm_family, min_pairs)
    return RankTable("R5", cases.algorithms, cases.subset_order, wins, _rank_block(wins, [True] * 3), weights)


def rank(data: SubsetSummary | CaseTable, method: str = "R1", weights: RankWeights = RankWeights(), **kw) -> RankTable:
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if method == "R5":
        if not isinstance(data, CaseTable):
            raise TypeError("R5 needs per-case data")
        return test_then_rank(data, weights, **kw)
    return rank_variant(data, method, weights)


# ---------------------------------------------------------------------------
# bootstrap


@dataclass(frozen=True, eq=False)
class BootstrapSummary:
    algorithms: tuple[str, ...]
    ranks: np.ndarray  # (B, K) final rank per replicate
    B: int
    seed: int

    def quantiles(self, qs: Sequence[float] = (0.025, 0.25, 0.5, 0.75, 0.975)) -> dict[str, dict[str, float]]:
        q = np.quantile(self.ranks, qs, axis=0)
        return {a: {f"q{qq:g}": float(q[i, k]) for i, qq in enumerate(qs)} for k, a in enumerate(self.algorithms)}

    def median(self) -> dict[str, float]:
        return dict(zip(self.algorithms, np.median(self.ranks, axis=0).tolist()))

    def share_rank1(self) -> dict[str, float]:
        return dict(zip(self.algorithms, (self.ranks == 1).mean(axis=0).tolist()))

    def to_dict(self) -> dict:
        return {
            "B": self.B,
            "seed": self.seed,
            "algorithms": list(self.algorithms),
            "median": self.median(),
            "quantiles": self.quantiles(),
            "share_rank1": self.share_rank1(),
        }


def _default_sampler(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, n, size=n)


def replicate_rng(seed: int, r: int) -> np.random.Generator:
    """Generator for replicate ``r``; a pure function of (seed, r)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), int(r)]))


def _bootstrap_chunk(cases: CaseTable, weights: RankWeights, seed: int, reps: range,
                     sampler: Callable[[np.random.Generator, int], np.ndarray]) -> np.ndarray:
    w = weights.as_array()
    subsets = cases.subset_index
    out = np.empty((len(reps), len(cases.algorithms)))
    for i, r in enumerate(reps):
        rng = replicate_rng(seed, r)
        resampled = {s: idx[np.asarray(sampler(rng, idx.size))] for s, idx in subsets.items()}
        means = _aggregate(cases.values, resampled, "mean")
        weighted = _rank_block(means, _METRIC_DIRECTIONS).mean(axis=2) @ w
        out[i] = rankdata(weighted, method="average")
    return out


def bootstrap_ranks(cases: CaseTable, B: int = 2000, seed: int = 0, weights: RankWeights = RankWeights(),
                    workers: int = 1, sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None
                    ) -> BootstrapSummary:
    """Final R1 rank of every algorithm over ``B`` stratified bootstrap replicates.

    Cases are resampled with replacement within each subset, keeping subset
    sizes. Output depends only on (cases, B, seed), never on ``workers``.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    _check_k(len(cases.algorithms))
    sampler = sampler or _default_sampler
    workers = max(1, int(workers))
    if workers == 1 or B < 2 * workers:
        ranks = _bootstrap_chunk(cases, weights, seed, range(B), sampler)
    else:
        step = math.ceil(B / workers)
        chunks = [range(i, min(B, i + step)) for i in range(0, B, step)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_bootstrap_chunk, [cases] * len(chunks), [weights] * len(chunks),
                                [seed] * len(chunks), chunks, [sampler] * len(chunks)))
        ranks = np.concatenate(parts, axis=0)
    return BootstrapSummary(cases.algorithms, ranks, int(B), int(seed))


# ---------------------------------------------------------------------------
# patient-level classification


@dataclass(frozen=True)
class ClassificationSummary:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def n_pos(self) -> int:
        return self.tp + self.fn

    @property
    def n_neg(self) -> int:
        return self.tn + self.fp

    @property
    def sensitivity(self) -> float:
        return self.tp / self.n_pos if self.n_pos else float("nan")

    @property
    def specificity(self) -> float:
        return self.tn / self.n_neg if self.n_neg else float("nan")

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / (self.n_pos + self.n_neg)

    @classmethod
    def from_counts(cls, tp: int, tn: int, n_pos: int, n_neg: int) -> ClassificationSummary:
        if not (0 <= tp <= n_pos and 0 <= tn <= n_neg):
            raise ValueError("counts exceed their populations")
        return cls(tp, tn, n_neg - tn, n_pos - tp)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn,
            "sensitivity": self.sensitivity, "specificity": self.specificity, "accuracy": self.accuracy,
        }


def classification_summary(reference_empty: Sequence[bool], prediction_empty: Sequence[bool]) -> ClassificationSummary:
    """Case-level lesion presence: a positive case is a TP when its prediction is non-empty."""
    ref_e = np.asarray(reference_empty, dtype=bool)
    pred_e = np.asarray(prediction_empty, dtype=bool)
    if ref_e.shape != pred_e.shape or ref_e.size == 0:
        raise ValueError("need at least one case with paired flags")
    tp = int((~ref_e & ~pred_e).sum())
    fn = int((~ref_e & pred_e).sum())
    tn = int((ref_e & pred_e).sum())
    fp = int((ref_e & ~pred_e).sum())
    return ClassificationSummary(tp, tn, fp, fn)
