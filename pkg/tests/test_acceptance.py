"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they
are also collected into the terminal summary.
"""
import json
import subprocess
import sys
import time
from contextlib import contextmanager
from importlib import resources

import jsonschema
import numpy as np
import pandas as pd
import pytest

import leaderboard as L
import oracles
from lesionbench.components import label_components, overlap_table
from lesionbench.harness import ROW_COLUMNS, evaluate_all, read_manifest
from lesionbench.lesion_metrics import (
    ONE_VOXEL,
    MatchCriterion,
    cc_dsc,
    detection_flags,
    error_taxonomy,
    fnv,
    fpv,
    panoptic,
    pooled_f1,
    sensitivity_sweep,
    taxonomy_sweep,
)
from lesionbench.ranking import CaseTable, SubsetSummary, bootstrap_ranks, classification_summary, official_ranking
from lesionbench.stats import holm_adjust, wilcoxon_signed_rank
from lesionbench.synth import SynthParams, degrade, synth_challenge, synth_reference
from lesionbench.volume_io import GridGeometry, LabelVolume
from lesionbench.voxel_metrics import NsdConfig, dsc, nsd, volume_ratio, volumetric_similarity

pytestmark = pytest.mark.slow


@contextmanager
def criterion(record_property, number, title):
    notes = []
    start = time.perf_counter()
    status = "FAIL"
    try:
        yield notes
        status = "PASS"
    finally:
        elapsed = time.perf_counter() - start
        extra = f" [{'; '.join(notes)}]" if notes else ""
        line = f"{status} criterion {number}: {title} ({elapsed:.2f}s){extra}"
        print(line)
        record_property("acceptance", line)


def schema(name):
    return json.loads(resources.files("lesionbench").joinpath(f"schemas/{name}.schema.json").read_text())


# ---------------------------------------------------------------------------
# 1


def test_criterion_1_leaderboard(record_property):
    with criterion(record_property, 1, "official leaderboard reproduced by R1") as notes:
        start = time.perf_counter()
        full = L.load()
        raw = L.ranked_rows(full)
        displayed = official_ranking(SubsetSummary.from_wide(raw))
        shown_bad = L.mismatches(L.published_cells(raw), L.computed_cells(displayed))
        restored, changes = L.restore_display_ties(raw)
        table = official_ranking(SubsetSummary.from_wide(restored))
        bad = L.mismatches(L.published_cells(raw), L.computed_cells(table))
        with_ens = official_ranking(SubsetSummary.from_wide(pd.concat([restored, full[full["algorithm"] == L.ENSEMBLE]])))
        elapsed = time.perf_counter() - start

        cells = len(L.published_cells(raw))
        notes.append(f"{cells - len(shown_bad)}/{cells} cells from displayed means")
        notes.append(f"{cells - len(bad)}/{cells} after {len(changes)} tie offsets")
        assert bad == []
        assert table.positions() == L.published_positions(raw)
        for algo, want in L.anchors().items():
            assert abs(table.weighted_of(algo) - want) <= 1e-9, algo
        assert abs(with_ens.weighted_of(L.ENSEMBLE) - 4.5625) <= 1e-9
        assert elapsed < 1.0


# ---------------------------------------------------------------------------
# 2


def test_criterion_2_classification(record_property):
    with criterion(record_property, 2, "patient-level classification rates"):
        for tp, tn, want in ((152, 12, (0.97, 0.27, 0.82)), (144, 35, (0.92, 0.80, 0.90))):
            ref_empty = [False] * 156 + [True] * 44
            pred_empty = [False] * tp + [True] * (156 - tp) + [True] * tn + [False] * (44 - tn)
            s = classification_summary(ref_empty, pred_empty)
            got = (round(s.sensitivity, 2), round(s.specificity, 2), round(s.accuracy, 2))
            assert got == want, (tp, tn, got)


# ---------------------------------------------------------------------------
# 3


def _random_pair(rng):
    dims = tuple(int(d) for d in rng.integers(1, 13, 3))
    spacing = tuple(float(s) for s in rng.choice([0.5, 1.0, 2.0, 3.0], 3))
    geom = GridGeometry(dims, spacing)
    g = rng.random(dims) < rng.choice([0.05, 0.15, 0.3, 0.5])
    if not g.any():
        g[tuple(d // 2 for d in dims)] = True
    mode = rng.integers(3)
    if mode == 0:
        p = rng.random(dims) < rng.choice([0.0, 0.05, 0.15, 0.3, 0.5])
    elif mode == 1:
        p = g ^ (rng.random(dims) < rng.choice([0.05, 0.15]))
    else:
        p = np.roll(g, int(rng.integers(-2, 3)), axis=int(rng.integers(3)))
    return LabelVolume(geom, g), LabelVolume(geom, p)


def test_criterion_3_metric_oracles(record_property):
    with criterion(record_property, 3, "metrics match the set-based oracle") as notes:
        rng = np.random.default_rng(20240)
        start = time.perf_counter()
        rel = oracles.rel_close
        pooled = {c: ([], [0, 0, 0]) for c in (6, 18, 26)}
        n = 500
        for _ in range(n):
            g, p = _random_pair(rng)
            conn = int(rng.choice([6, 18, 26]))
            tau = float(rng.choice([0.1, 0.25, 0.5]))
            dims, spacing = g.geometry.dims, g.geometry.spacing
            v = g.geometry.voxel_volume_ml
            G, P = oracles.voxel_set(g.voxels), oracles.voxel_set(p.voxels)
            refs, preds = oracles.component_sets(g.voxels, conn), oracles.component_sets(p.voxels, conn)
            ref_cc, pred_cc = label_components(g, conn), label_components(p, conn)
            ot = overlap_table(ref_cc, pred_cc)

            assert rel(dsc(g, p), oracles.dsc(G, P))
            assert rel(volumetric_similarity(g, p), oracles.vs(G, P))
            assert rel(nsd(g, p), oracles.nsd(G, P, dims))
            tol_mm = float(rng.uniform(0.5, 4.0))
            assert rel(nsd(g, p, NsdConfig(tol_mm, in_mm=True)), oracles.nsd(G, P, dims, tol_mm, spacing))
            assert rel(volume_ratio(g, p), oracles.volume_ratio(G, P, v))
            for crit, t in ((ONE_VOXEL, None), (MatchCriterion.iou(tau), tau)):
                o = oracles.lesion_oracle(refs, preds, v, t)
                det, matched = detection_flags(ot, crit)
                assert det.tolist() == o["detected"] and matched.tolist() == o["matched"]
                assert error_taxonomy(ot, crit).to_dict() == o["taxonomy"]
                if t is None:
                    assert rel(fpv(ot), o["fpv"]) and rel(fnv(ot), o["fnv"])
                    acc = pooled[conn]
                    acc[0].append(ot)
                    acc[1][0] += o["tp"]
                    acc[1][1] += o["fp"]
                    acc[1][2] += o["fn"]
            pq = panoptic(ot, 0.1)
            opq, osq, orq = oracles.panoptic(refs, preds, 0.1)
            assert rel(pq.pq, opq) and rel(pq.sq, osq) and rel(pq.rq, orq)
            assert rel(cc_dsc(ref_cc, p), oracles.cc_dsc(refs, P, spacing))
        for conn, (ots, (tp, fp, fn)) in pooled.items():
            if ots:
                assert rel(pooled_f1(ots), 2 * tp / (2 * tp + fp + fn))
        elapsed = time.perf_counter() - start
        notes.append(f"{n} pairs")
        assert elapsed < 60


# ---------------------------------------------------------------------------
# 4


def test_criterion_4_components(record_property):
    with criterion(record_property, 4, "component labeling matches flood fill") as notes:
        rng = np.random.default_rng(4)
        masks = rng.random((10_000, 3, 3, 3)) < rng.uniform(0.05, 0.8, (10_000, 1, 1, 1))
        geom = GridGeometry((3, 3, 3), (1.0, 1.0, 1.0))
        for arr in masks:
            vol = LabelVolume(geom, arr)
            for conn in (6, 18, 26):
                want, count = oracles.flood_fill(arr, conn)
                got = label_components(vol, conn)
                assert got.count == count and np.array_equal(got.labels, want), (arr.tolist(), conn)
        big = GridGeometry((16, 16, 16), (1.0, 1.0, 1.0))
        for _ in range(1000):
            arr = rng.random((16, 16, 16)) < rng.uniform(0.05, 0.6)
            vol = LabelVolume(big, arr)
            c6, c18, c26 = (label_components(vol, c).count for c in (6, 18, 26))
            assert c6 >= c18 >= c26
        notes.append("10000 masks x 3 connectivities, 1000 monotonicity grids")


# ---------------------------------------------------------------------------
# 5


def test_criterion_5_wilcoxon_holm(record_property):
    with criterion(record_property, 5, "exact Wilcoxon and Holm") as notes:
        rng = np.random.default_rng(5)
        checked = 0
        for n in range(1, 11):
            vectors = [np.arange(1, n + 1, dtype=float), -np.arange(1, n + 1, dtype=float)]
            vectors += [rng.integers(-3, 4, n).astype(float) for _ in range(60)]
            vectors += [rng.normal(0.2, 1, n) for _ in range(60)]
            for d in vectors:
                if np.count_nonzero(d) == 0:
                    continue
                for alt in ("greater", "less", "two_sided"):
                    got = wilcoxon_signed_rank(d, np.zeros(n), alt, min_pairs=1)
                    want = oracles.wilcoxon_enumerate(d, np.zeros(n), alt)
                    assert abs(got - want) <= 1e-12, (d.tolist(), alt, got, want)
                    checked += 1
        for _ in range(1000):
            m = int(rng.integers(1, 40))
            p = rng.random(m)
            if rng.random() < 0.3:
                p[rng.integers(m, size=m // 2)] = p[0]
            assert np.abs(holm_adjust(p) - np.asarray(oracles.holm(p))).max() <= 1e-12
        notes.append(f"{checked} signed-rank p-values, 1000 Holm vectors")


# ---------------------------------------------------------------------------
# 6


DOMINANCE_ALGOS = {
    "clean": {},
    "dilated": {"dilate": 1, "drop_prob": 0.2, "spurious_rate": 0.5},
    "dropper": {"drop_prob": 0.4, "spurious_rate": 1.0},
}


@pytest.fixture(scope="module")
def synthetic_cases(tmp_path_factory):
    root = tmp_path_factory.mktemp("acc6")
    params = SynthParams(dims=(24, 24, 16), radius_mm=(3, 8))
    path = synth_challenge(params, DOMINANCE_ALGOS, 20, root, seed=6)
    return CaseTable.from_frame(evaluate_all(read_manifest(path)).metrics)


def test_criterion_6_bootstrap(record_property, synthetic_cases):
    with criterion(record_property, 6, "bootstrap determinism and dominance") as notes:
        cases = synthetic_cases
        start = time.perf_counter()
        a = bootstrap_ranks(cases, B=200, seed=11, workers=1)
        b = bootstrap_ranks(cases, B=200, seed=11, workers=1)
        c = bootstrap_ranks(cases, B=200, seed=11, workers=2)
        elapsed = time.perf_counter() - start
        assert a.ranks.tobytes() == b.ranks.tobytes() == c.ranks.tobytes()
        share = a.share_rank1()
        notes.append(f"clean rank-1 share {share['clean']:.3f}")
        assert share["clean"] == 1.0
        assert elapsed < 30


# ---------------------------------------------------------------------------
# 7


def _population(params, seed, n_cases=80):
    ots = []
    for j in range(n_cases):
        ref, _ = synth_reference(params, np.random.default_rng(np.random.SeedSequence([seed, j, 0])))
        pred, _ = degrade(ref, params, np.random.default_rng(np.random.SeedSequence([seed, j, 1])))
        ots.append(overlap_table(label_components(ref), label_components(pred)))
    return ots


def test_criterion_7_sweep_shape(record_property):
    with criterion(record_property, 7, "sensitivity sweep shape") as notes:
        taus = [round(0.01 * k, 2) for k in range(1, 51)]
        populations = [
            SynthParams(drop_prob=0.2, spurious_rate=0.5, dilate=1),
            SynthParams(erode=1, marginal_prob=0.3),
            SynthParams(spurious_rate=1.0, marginal_prob=0.2),
        ]
        for i, params in enumerate(populations):
            ots = _population(params, 70 + i, 40)
            sens = [pt.sensitivity for pt in sensitivity_sweep(ots, taus)]
            assert all(b <= a for a, b in zip(sens, sens[1:]))
            n_ref = sum(ot.n_ref for ot in ots)
            n_pred = sum(ot.n_pred for ot in ots)
            for _, t in taxonomy_sweep(ots, taus):
                assert t.cd + t.df + t.cluster_refs == n_ref
                assert t.cd + t.fa + t.cluster_preds == n_pred
        ratios = []
        for seed in range(3):
            ots = _population(SynthParams(marginal_prob=0.6, negative_prob=0.0), 700 + seed)
            pts = sensitivity_sweep(ots, [0.5])
            ratios.append(pts[1].sensitivity / pts[0].sensitivity)
        notes.append("tau=0.5 / one-voxel: " + ", ".join(f"{r:.3f}" for r in ratios))
        assert max(ratios) <= 0.5


# ---------------------------------------------------------------------------
# 8


def _run(*args, cwd):
    proc = subprocess.run([sys.executable, "-m", "lesionbench", *args], cwd=cwd, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


def _pipeline(root):
    root.mkdir(parents=True)
    (root / "params.json").write_text(json.dumps({"spurious_rate": 0.3, "algorithms": DOMINANCE_ALGOS}))
    _run("synth", "--params", "params.json", "--cases", "20", "--seed", "8", "--out", "data", cwd=root)
    _run("evaluate", "--manifest", "data/manifest.json", "--out", "out", cwd=root)
    _run("rank", "--metrics", "out/metrics.csv", "--out", "out", cwd=root)
    _run("bootstrap", "--metrics", "out/metrics.csv", "--replicates", "200", "--seed", "3", "--out", "out", cwd=root)
    _run("sweep", "--metrics-dir", "out", cwd=root)


def test_criterion_8_cli_pipeline(record_property, tmp_path):
    with criterion(record_property, 8, "end-to-end CLI pipeline") as notes:
        start = time.perf_counter()
        _pipeline(tmp_path / "a")
        first = time.perf_counter() - start
        _pipeline(tmp_path / "b")
        notes.append(f"one pass {first:.1f}s")
        assert first < 120

        out = tmp_path / "a" / "out"
        jsonschema.validate(json.loads((tmp_path / "a" / "data" / "manifest.json").read_text()), schema("manifest"))
        metrics = pd.read_csv(out / "metrics.csv", keep_default_na=False)
        assert list(metrics.columns) == list(ROW_COLUMNS) and len(metrics) == 80 * 3
        assert (metrics["error"] == "").all()
        lb = pd.read_csv(out / "leaderboard.csv")
        assert lb.columns[:4].tolist() == ["algorithm", "position", "weighted_rank", "final_rank"]
        assert len(lb) == 3 and lb["final_rank"].sum() == 6
        jsonschema.validate(json.loads((out / "bootstrap.json").read_text()), schema("bootstrap"))
        jsonschema.validate(json.loads((out / "sweep.json").read_text()), schema("sweep"))

        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert files == sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
        for rel in files:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
        notes.append(f"{len(files)} files byte-identical")
