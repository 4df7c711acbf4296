"""Hypothesis strategies shared by the property tests."""
import numpy as np
from hypothesis import strategies as st

from lesionbench.volume_io import GridGeometry, LabelVolume

dims_st = st.tuples(*(st.integers(1, 8) for _ in range(3)))
spacing_st = st.tuples(*(st.sampled_from([0.5, 1.0, 1.5, 2.0, 3.0]) for _ in range(3)))


@st.composite
def bool_arrays(draw, dims=None, max_side=8):
    if dims is None:
        dims = draw(st.tuples(*(st.integers(1, max_side) for _ in range(3))))
    density = draw(st.sampled_from([0.0, 0.1, 0.3, 0.5, 0.8]))
    seed = draw(st.integers(0, 2**32 - 1))
    return np.random.default_rng(seed).random(dims) < density


@st.composite
def mask_pairs(draw, max_side=8, nonempty_ref=False):
    dims = draw(st.tuples(*(st.integers(1, max_side) for _ in range(3))))
    spacing = draw(spacing_st)
    g = draw(bool_arrays(dims=dims))
    if nonempty_ref and not g.any():
        g = g.copy()
        g[tuple(d // 2 for d in dims)] = True
    mode = draw(st.sampled_from(["independent", "perturbed", "copy"]))
    if mode == "independent":
        p = draw(bool_arrays(dims=dims))
    elif mode == "copy":
        p = g.copy()
    else:
        seed = draw(st.integers(0, 2**32 - 1))
        p = g ^ (np.random.default_rng(seed).random(dims) < 0.15)
    geom = GridGeometry(dims, spacing)
    return LabelVolume(geom, g), LabelVolume(geom, p)
