# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementations of the hot kernels (see py_kernels for contracts).

Outputs are bit-identical to the pure-numpy versions: component numbering,
watershed tie-breaking and tree-margin accumulation follow the same order.
"""

import numpy as np

cimport numpy as cnp
from libc.stdlib cimport free, malloc

cnp.import_array()

NAME = "cython"

cdef int DR8[8]
cdef int DC8[8]
DR8[0] = -1; DR8[1] = 1; DR8[2] = 0; DR8[3] = 0
DR8[4] = -1; DR8[5] = -1; DR8[6] = 1; DR8[7] = 1
DC8[0] = 0; DC8[1] = 0; DC8[2] = -1; DC8[3] = 1
DC8[4] = -1; DC8[5] = 1; DC8[6] = -1; DC8[7] = 1


cdef inline Py_ssize_t _find(Py_ssize_t[::1] parent, Py_ssize_t i) nogil:
    cdef Py_ssize_t root = i
    while parent[root] != root:
        root = parent[root]
    cdef Py_ssize_t nxt
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


cdef inline void _union(Py_ssize_t[::1] parent, Py_ssize_t a, Py_ssize_t b) nogil:
    cdef Py_ssize_t ra = _find(parent, a)
    cdef Py_ssize_t rb = _find(parent, b)
    if ra < rb:
        parent[rb] = ra
    elif rb < ra:
        parent[ra] = rb


def label(fg, int connectivity=8):
    """Two-pass union-find labeling; components numbered in scan order."""
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] f = np.ascontiguousarray(
        np.asarray(fg) != 0, dtype=np.uint8)
    cdef Py_ssize_t h = f.shape[0], w = f.shape[1]
    cdef cnp.ndarray[cnp.npy_intp, ndim=1] parent_arr = np.arange(h * w, dtype=np.intp)
    cdef Py_ssize_t[::1] parent = parent_arr
    cdef Py_ssize_t r, c, i
    with nogil:
        for r in range(h):
            for c in range(w):
                if not f[r, c]:
                    continue
                i = r * w + c
                if c > 0 and f[r, c - 1]:
                    _union(parent, i, i - 1)
                if r > 0:
                    if f[r - 1, c]:
                        _union(parent, i, i - w)
                    if connectivity == 8:
                        if c > 0 and f[r - 1, c - 1]:
                            _union(parent, i, i - w - 1)
                        if c < w - 1 and f[r - 1, c + 1]:
                            _union(parent, i, i - w + 1)
    cdef cnp.ndarray[cnp.int32_t, ndim=2] out = np.zeros((h, w), dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] compact = np.zeros(h * w, dtype=np.int32)
    cdef cnp.int32_t[:, ::1] outv = out
    cdef cnp.int32_t[::1] cv = compact
    cdef Py_ssize_t root
    cdef int count = 0
    with nogil:
        for r in range(h):
            for c in range(w):
                if not f[r, c]:
                    continue
                root = _find(parent, r * w + c)
                if cv[root] == 0:
                    count += 1
                    cv[root] = count
                outv[r, c] = cv[root]
    return out, count


def fill_holes(fg):
    """Fill 4-connected background regions that do not touch the border."""
    f = np.ascontiguousarray(np.asarray(fg) != 0, dtype=np.uint8)
    bg_lab, n = label(1 - f, connectivity=4)
    if n == 0:
        return f
    border = np.unique(np.concatenate([
        bg_lab[0, :], bg_lab[-1, :], bg_lab[:, 0], bg_lab[:, -1]]))
    border = border[border > 0]
    keep_open = np.isin(bg_lab, border)
    return (f.astype(bool) | ((bg_lab > 0) & ~keep_open)).astype(np.uint8)


cdef struct HeapItem:
    double elev
    long long order
    int r
    int c


cdef inline bint _less(HeapItem a, HeapItem b) nogil:
    if a.elev != b.elev:
        return a.elev < b.elev
    return a.order < b.order


cdef class _Heap:
    cdef HeapItem* data
    cdef Py_ssize_t size
    cdef Py_ssize_t cap

    def __cinit__(self, Py_ssize_t cap):
        self.data = <HeapItem*> malloc(cap * sizeof(HeapItem))
        if self.data == NULL:
            raise MemoryError()
        self.size = 0
        self.cap = cap

    def __dealloc__(self):
        if self.data != NULL:
            free(self.data)

    cdef void push(self, HeapItem item) nogil:
        cdef Py_ssize_t i = self.size
        cdef Py_ssize_t p
        self.data[i] = item
        self.size += 1
        while i > 0:
            p = (i - 1) >> 1
            if _less(self.data[i], self.data[p]):
                self.data[i], self.data[p] = self.data[p], self.data[i]
                i = p
            else:
                break

    cdef HeapItem pop(self) nogil:
        cdef HeapItem top = self.data[0]
        cdef Py_ssize_t i = 0, child
        self.size -= 1
        self.data[0] = self.data[self.size]
        while True:
            child = 2 * i + 1
            if child >= self.size:
                break
            if child + 1 < self.size and _less(self.data[child + 1], self.data[child]):
                child += 1
            if _less(self.data[child], self.data[i]):
                self.data[i], self.data[child] = self.data[child], self.data[i]
                i = child
            else:
                break
        return top


def watershed(elevation, markers, allowed):
    """Marker-seeded priority flood with watershed line (8-connected)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] elev = np.ascontiguousarray(
        elevation, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=2] mk = np.ascontiguousarray(
        markers, dtype=np.int32)
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] ok = np.ascontiguousarray(
        np.asarray(allowed) != 0, dtype=np.uint8)
    cdef Py_ssize_t h = elev.shape[0], w = elev.shape[1]
    cdef cnp.ndarray[cnp.int32_t, ndim=2] out = np.zeros((h, w), dtype=np.int32)
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] state = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.int32_t[:, ::1] outv = out
    cdef cnp.uint8_t[:, ::1] sv = state
    cdef _Heap heap = _Heap(8 * h * w + 64)
    cdef HeapItem item
    cdef long long order = 0
    cdef Py_ssize_t r, c, k, rr, cc
    cdef int lab
    cdef bint boundary
    with nogil:
        for r in range(h):
            for c in range(w):
                if mk[r, c] > 0 and ok[r, c]:
                    outv[r, c] = mk[r, c]
                    sv[r, c] = 2
        for r in range(h):
            for c in range(w):
                if sv[r, c] != 2:
                    continue
                for k in range(8):
                    rr = r + DR8[k]
                    cc = c + DC8[k]
                    if 0 <= rr < h and 0 <= cc < w and sv[rr, cc] == 0 and ok[rr, cc]:
                        sv[rr, cc] = 1
                        item.elev = elev[rr, cc]
                        item.order = order
                        item.r = <int> rr
                        item.c = <int> cc
                        heap.push(item)
                        order += 1
        while heap.size > 0:
            item = heap.pop()
            r = item.r
            c = item.c
            lab = 0
            boundary = False
            for k in range(8):
                rr = r + DR8[k]
                cc = c + DC8[k]
                if 0 <= rr < h and 0 <= cc < w and sv[rr, cc] == 2 and outv[rr, cc] > 0:
                    if lab == 0:
                        lab = outv[rr, cc]
                    elif outv[rr, cc] != lab:
                        boundary = True
            sv[r, c] = 2
            if boundary or lab == 0:
                continue
            outv[r, c] = lab
            for k in range(8):
                rr = r + DR8[k]
                cc = c + DC8[k]
                if 0 <= rr < h and 0 <= cc < w and sv[rr, cc] == 0 and ok[rr, cc]:
                    sv[rr, cc] = 1
                    item.elev = elev[rr, cc]
                    item.order = order
                    item.r = <int> rr
                    item.c = <int> cc
                    heap.push(item)
                    order += 1
    return out


def gbt_hist(binned, grad, hess, node_of, int n_nodes, int n_bins):
    """Per-(node, feature, bin) gradient/hessian histograms."""
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] b = np.ascontiguousarray(binned, dtype=np.uint8)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g = np.ascontiguousarray(grad, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] hh = np.ascontiguousarray(hess, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] node = np.ascontiguousarray(node_of, dtype=np.int32)
    cdef Py_ssize_t n = b.shape[0], f = b.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] G = np.zeros((n_nodes, f, n_bins))
    cdef cnp.ndarray[cnp.float64_t, ndim=3] H = np.zeros((n_nodes, f, n_bins))
    cdef cnp.float64_t[:, :, ::1] Gv = G
    cdef cnp.float64_t[:, :, ::1] Hv = H
    cdef Py_ssize_t i, j
    cdef int nd
    with nogil:
        for i in range(n):
            nd = node[i]
            if nd < 0:
                continue
            for j in range(f):
                Gv[nd, j, b[i, j]] += g[i]
                Hv[nd, j, b[i, j]] += hh[i]
    return G, H


def gbt_predict(x, feat, thr, value, double learning_rate, double base_margin):
    """Sum of tree outputs; same accumulation order as the numpy version."""
    cdef cnp.ndarray[cnp.float32_t, ndim=2] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef cnp.ndarray[cnp.int32_t, ndim=2] fv = np.ascontiguousarray(feat, dtype=np.int32)
    cdef cnp.ndarray[cnp.float32_t, ndim=2] tv = np.ascontiguousarray(thr, dtype=np.float32)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] vv = np.ascontiguousarray(value, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    cdef Py_ssize_t n_trees = fv.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.full(n, base_margin)
    cdef cnp.float64_t[::1] ov = out
    cdef Py_ssize_t i, t
    cdef Py_ssize_t node
    cdef int ft
    with nogil:
        for i in range(n):
            for t in range(n_trees):
                node = 0
                ft = fv[t, node]
                while ft >= 0:
                    if xv[i, ft] >= tv[t, node]:
                        node = 2 * node + 2
                    else:
                        node = 2 * node + 1
                    ft = fv[t, node]
                ov[i] += learning_rate * vv[t, node]
    return out
