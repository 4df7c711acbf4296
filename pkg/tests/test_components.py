import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import make_mask, mask_from_coords
from lesionbench.components import (
    OverlapTable,
    component_stats,
    label_components,
    overlap_table,
)
from lesionbench.errors import GeometryMismatch
from lesionbench.volume_io import GridGeometry, IntensityVolume, LabelVolume
from strategies import bool_arrays, mask_pairs


def test_empty_mask(backend):
    lab = label_components(make_mask(np.zeros((3, 4, 5))), 18, backend)
    assert lab.count == 0 and lab.sizes.size == 0 and not lab.labels.any()


@pytest.mark.parametrize("conn, expected", [(6, 2), (18, 2), (26, 1)])
def test_corner_contact(backend, conn, expected):
    m = mask_from_coords((2, 2, 2), [(0, 0, 0), (1, 1, 1)])
    assert label_components(m, conn, backend).count == expected
    assert oracles.flood_fill(m.voxels, conn)[1] == expected


@pytest.mark.parametrize("conn, expected", [(6, 2), (18, 1), (26, 1)])
def test_edge_contact(backend, conn, expected):
    m = mask_from_coords((2, 2, 1), [(0, 0, 0), (1, 1, 0)])
    assert label_components(m, conn, backend).count == expected
    assert oracles.flood_fill(m.voxels, conn)[1] == expected


def test_label_order_is_x_fastest_scan(backend):
    # (2,0,0) comes before (0,1,0) in x-fastest order
    m = mask_from_coords((3, 3, 3), [(0, 1, 0), (2, 0, 0), (0, 0, 2)])
    lab = label_components(m, 6, backend)
    assert lab.labels[2, 0, 0] == 1 and lab.labels[0, 1, 0] == 2 and lab.labels[0, 0, 2] == 3


def test_bad_connectivity():
    with pytest.raises(ValueError):
        label_components(make_mask(np.ones((2, 2, 2))), 8)


@pytest.mark.parametrize("conn", [6, 18, 26])
def test_random_masks_match_flood_fill(backend, conn):
    rng = np.random.default_rng(conn)
    for _ in range(40):
        dims = tuple(rng.integers(1, 9, size=3))
        arr = rng.random(dims) < rng.uniform(0.1, 0.7)
        got = label_components(make_mask(arr), conn, backend)
        want, n = oracles.flood_fill(arr, conn)
        assert got.count == n
        assert np.array_equal(got.labels, want)


def test_backends_agree_bitwise():
    from lesionbench import available_backends

    backends = available_backends()
    rng = np.random.default_rng(11)
    for _ in range(20):
        arr = rng.random((20, 17, 13)) < 0.3
        for conn in (6, 18, 26):
            labs = [label_components(make_mask(arr), conn, b).labels for b in backends]
            assert all(np.array_equal(labs[0], x) for x in labs[1:])


@given(bool_arrays(max_side=10))
def test_labeling_invariants(arr):
    m = make_mask(arr)
    counts = []
    for conn in (6, 18, 26):
        lab = label_components(m, conn)
        assert set(np.unique(lab.labels)) <= set(range(lab.count + 1))
        assert set(np.unique(lab.labels[lab.labels > 0])) == set(range(1, lab.count + 1))
        assert lab.sizes.sum() == arr.sum()
        assert (lab.sizes >= 1).all()
        counts.append(lab.count)
        again = label_components(m, conn)
        assert np.array_equal(again.labels, lab.labels)
    assert counts[0] >= counts[1] >= counts[2]


# ---------------------------------------------------------------------------
# overlap table


def _labs(g, p, conn=18, backend=None):
    return label_components(g, conn, backend), label_components(p, conn, backend)


def test_identical_single_component(backend):
    arr = np.zeros((5, 5, 5), bool)
    arr[1:3, 1:3, 1:3] = True
    arr[3, 1, 1] = arr[3, 2, 1] = True
    m = make_mask(arr)
    ot = overlap_table(*_labs(m, m, backend=backend), backend=backend)
    assert ot.entries == {(1, 1): 10}


def test_disjoint_masks(backend):
    g = mask_from_coords((6, 1, 1), [(0, 0, 0)])
    p = mask_from_coords((6, 1, 1), [(3, 0, 0), (5, 0, 0)])
    ot = overlap_table(*_labs(g, p, backend=backend), backend=backend)
    assert ot.entries == {} and ot.n_ref == 1 and ot.n_pred == 2


def test_two_refs_one_pred(backend):
    dims = (12, 3, 1)
    ref = [(x, 0, 0) for x in range(4)] + [(x, 0, 0) for x in range(6, 12)]
    pred = [(x, 1, 0) for x in range(12)] + [(2, 0, 0), (3, 0, 0), (6, 0, 0), (7, 0, 0)]
    g, p = mask_from_coords(dims, ref), mask_from_coords(dims, pred)
    ot = overlap_table(*_labs(g, p, conn=6, backend=backend), backend=backend)
    assert ot.entries == {(1, 1): 2, (2, 1): 2}
    assert ot.ref_sizes.tolist() == [4, 6]
    want = oracles.intersections(oracles.component_sets(g.voxels, 6), oracles.component_sets(p.voxels, 6))
    assert ot.entries == want


def test_geometry_mismatch():
    a = make_mask(np.ones((2, 2, 2)))
    b = make_mask(np.ones((2, 2, 2)), spacing=(2, 1, 1))
    with pytest.raises(GeometryMismatch):
        overlap_table(label_components(a), label_components(b))


def test_dict_round_trip():
    rng = np.random.default_rng(3)
    g, p = make_mask(rng.random((6, 6, 6)) < 0.3), make_mask(rng.random((6, 6, 6)) < 0.3)
    ot = overlap_table(*_labs(g, p))
    back = OverlapTable.from_dict(ot.to_dict())
    assert back.entries == ot.entries and back.n_ref == ot.n_ref and back.n_pred == ot.n_pred
    assert np.array_equal(back.ref_sizes, ot.ref_sizes) and back.voxel_volume_ml == ot.voxel_volume_ml


@given(mask_pairs(max_side=9), st.sampled_from([6, 18, 26]))
def test_overlap_invariants(pair, conn):
    g, p = pair
    ref, pred = _labs(g, p, conn)
    ot = overlap_table(ref, pred)
    assert ot.inter.sum() == np.count_nonzero(g.voxels & p.voxels)
    assert (ot.inter >= 1).all()
    for (i, l), c in ot.entries.items():
        assert c <= min(ot.ref_sizes[i - 1], ot.pred_sizes[l - 1])
    per_ref = np.bincount(ot.ref_ids - 1, weights=ot.inter, minlength=ot.n_ref)
    assert (per_ref <= ot.ref_sizes).all()
    assert ot.entries == oracles.intersections(oracles.component_sets(g.voxels, conn),
                                               oracles.component_sets(p.voxels, conn))
    t = ot.transposed()
    assert t.entries == {(l, i): c for (i, l), c in ot.entries.items()}


# ---------------------------------------------------------------------------
# stats


def test_volume_at_2mm():
    g = GridGeometry((5, 1, 1), (2.0, 2.0, 2.0))
    lab = label_components(LabelVolume(g, np.ones(g.dims, bool)))
    stats = component_stats(lab)
    assert stats.volume_ml[0] == pytest.approx(0.04, rel=1e-12)
    assert stats.suv_max is None


def test_suv_max():
    g = GridGeometry((7, 1, 1), (1, 1, 1))
    arr = np.array([1, 1, 1, 0, 1, 0, 1], bool).reshape(7, 1, 1)
    inten = np.array([1.0, 9.5, 2.2, 50.0, 3.0, 0.0, 4.0]).reshape(7, 1, 1)
    lab = label_components(LabelVolume(g, arr))
    stats = component_stats(lab, IntensityVolume(g, inten))
    assert stats.suv_max.tolist() == [9.5, 3.0, 4.0]
    assert stats.bbox[0].tolist() == [0, 2, 0, 0, 0, 0]
    const = component_stats(lab, IntensityVolume(g, np.full(g.dims, 3.0)))
    assert const.suv_max.tolist() == [3.0, 3.0, 3.0]


def test_stats_geometry_mismatch():
    lab = label_components(make_mask(np.ones((2, 2, 2))))
    with pytest.raises(GeometryMismatch):
        component_stats(lab, IntensityVolume(GridGeometry((2, 2, 1), (1, 1, 1)), np.ones((2, 2, 1))))
