"""Pure numpy/scipy versions of the compiled kernels in ``_ccl.pyx``.

Same signatures and bitwise-identical outputs; selected automatically when the
extension is not built.
"""
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


def _backward_offsets(connectivity):
    offs = []
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                nz = (dx != 0) + (dy != 0) + (dz != 0)
                if nz == 0:
                    continue
                if connectivity == 6 and nz > 1:
                    continue
                if connectivity == 18 and nz > 2:
                    continue
                if dz < 0 or (dz == 0 and dy < 0) or (dz == 0 and dy == 0 and dx < 0):
                    offs.append((dx, dy, dz))
    return offs


def _window(d, n):
    # source slice and its neighbour slice for a shift of d along an axis of length n
    if d < 0:
        return slice(-d, n), slice(0, n + d)
    if d > 0:
        return slice(0, n - d), slice(d, n)
    return slice(0, n), slice(0, n)


def label_flat(mask, nx, ny, nz, connectivity):
    flat = np.asarray(mask, dtype=np.uint8)
    n = flat.shape[0]
    labels = np.zeros(n, dtype=np.int32)
    fg = np.flatnonzero(flat)
    if fg.size == 0:
        return labels, 0
    vol = flat.reshape((nx, ny, nz), order="F").astype(bool)
    node_flat = np.full(n, -1, dtype=np.int64)
    node_flat[fg] = np.arange(fg.size)
    node = node_flat.reshape((nx, ny, nz), order="F")
    rows, cols = [], []
    for dx, dy, dz in _backward_offsets(connectivity):
        sx, tx = _window(dx, nx)
        sy, ty = _window(dy, ny)
        sz, tz = _window(dz, nz)
        both = vol[sx, sy, sz] & vol[tx, ty, tz]
        rows.append(node[sx, sy, sz][both])
        cols.append(node[tx, ty, tz][both])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    graph = coo_matrix((np.ones(r.size, dtype=np.int8), (r, c)), shape=(fg.size, fg.size))
    count, comp = connected_components(graph, directed=False)
    # order components by their first voxel in x-fastest scan order
    first = np.full(count, fg.size, dtype=np.int64)
    np.minimum.at(first, comp, np.arange(fg.size))
    order = np.argsort(first, kind="stable")
    rank = np.empty(count, dtype=np.int32)
    rank[order] = np.arange(1, count + 1, dtype=np.int32)
    labels[fg] = rank[comp]
    return labels, int(count)


def overlap_flat(ref, pred, n_pred):
    ref = np.asarray(ref, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    both = (ref != 0) & (pred != 0)
    keys = ref[both] * (n_pred + 1) + pred[both]
    keys, counts = np.unique(keys, return_counts=True)
    return keys // (n_pred + 1), keys % (n_pred + 1), counts.astype(np.int64)
