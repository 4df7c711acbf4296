# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled voxel kernels: union-find component labeling and overlap counting.

All arrays are flat and in x-fastest order (linear index x + nx*(y + ny*z)).
"""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport int32_t, int64_t, uint8_t
from libcpp.unordered_map cimport unordered_map
from libcpp.pair cimport pair
from cython.operator cimport dereference as deref, preincrement as inc

cnp.import_array()


cdef inline int32_t _find(int32_t* parent, int32_t x) noexcept nogil:
    cdef int32_t root = x
    cdef int32_t nxt
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


cdef inline void _union(int32_t* parent, int32_t a, int32_t b) noexcept nogil:
    a = _find(parent, a)
    b = _find(parent, b)
    # keep the smallest provisional label as root, so roots sort like first voxels
    if a < b:
        parent[b] = a
    elif b < a:
        parent[a] = b


def _backward_offsets(int connectivity):
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


def label_flat(const uint8_t[::1] mask, int nx, int ny, int nz, int connectivity):
    """Two-pass union-find labeling. Returns (labels int32, count)."""
    cdef Py_ssize_t n = mask.shape[0]
    offs = _backward_offsets(connectivity)
    cdef int n_off = len(offs)
    cdef int[:, ::1] off = np.asarray(offs, dtype=np.intc).reshape(n_off, 3)
    labels_arr = np.zeros(n, dtype=np.int32)
    cdef int32_t[::1] labels = labels_arr
    cdef Py_ssize_t fg = 0
    cdef Py_ssize_t i
    for i in range(n):
        fg += mask[i] != 0
    parent_arr = np.zeros(fg + 1, dtype=np.int32)
    cdef int32_t[::1] parent_view = parent_arr
    cdef int32_t* parent = &parent_view[0]
    cdef int32_t next_label = 1
    cdef int32_t cur, nb
    cdef int x, y, z, k, xx, yy, zz
    cdef Py_ssize_t idx, nidx
    with nogil:
        idx = 0
        for z in range(nz):
            for y in range(ny):
                for x in range(nx):
                    if mask[idx] != 0:
                        cur = 0
                        for k in range(n_off):
                            xx = x + off[k, 0]
                            yy = y + off[k, 1]
                            zz = z + off[k, 2]
                            if xx < 0 or xx >= nx or yy < 0 or yy >= ny or zz < 0:
                                continue
                            nidx = xx + <Py_ssize_t>nx * (yy + <Py_ssize_t>ny * zz)
                            nb = labels[nidx]
                            if nb == 0:
                                continue
                            if cur == 0:
                                cur = nb
                            else:
                                _union(parent, cur, nb)
                        if cur == 0:
                            cur = next_label
                            parent[cur] = cur
                            next_label += 1
                        labels[idx] = cur
                    idx += 1
    final_arr = np.zeros(next_label, dtype=np.int32)
    cdef int32_t[::1] final = final_arr
    cdef int32_t count = 0
    cdef int32_t p
    with nogil:
        for p in range(1, next_label):
            if _find(parent, p) == p:
                count += 1
                final[p] = count
        for i in range(n):
            if labels[i] != 0:
                labels[i] = final[_find(parent, labels[i])]
    return labels_arr, int(count)


def overlap_flat(const int32_t[::1] ref, const int32_t[::1] pred, int n_pred):
    """Single pass intersection counts. Returns sorted (ref_ids, pred_ids, counts)."""
    cdef Py_ssize_t n = ref.shape[0]
    cdef unordered_map[int64_t, int64_t] counts
    cdef int64_t stride = n_pred + 1
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            if ref[i] != 0 and pred[i] != 0:
                counts[<int64_t>ref[i] * stride + pred[i]] += 1
    cdef Py_ssize_t m = counts.size()
    keys_arr = np.empty(m, dtype=np.int64)
    vals_arr = np.empty(m, dtype=np.int64)
    cdef int64_t[::1] keys = keys_arr
    cdef int64_t[::1] vals = vals_arr
    cdef unordered_map[int64_t, int64_t].iterator it = counts.begin()
    i = 0
    while it != counts.end():
        keys[i] = deref(it).first
        vals[i] = deref(it).second
        i += 1
        inc(it)
    order = np.argsort(keys_arr, kind="stable")
    keys_arr = keys_arr[order]
    return keys_arr // stride, keys_arr % stride, vals_arr[order]
