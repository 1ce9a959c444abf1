"""Pure-numpy implementations of the hot kernels.

Drop-in replacements for the compiled extension in ``_kernels``: same
signatures, same outputs (bit-identical labelings, identical tree
traversals). Slower on large rasters; the benchmark in benchmarks/
quantifies the gap.
"""

import heapq

import numpy as np

NAME = "python"

_SHIFTS_4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
_SHIFTS_8 = _SHIFTS_4 + ((-1, -1), (-1, 1), (1, -1), (1, 1))


def _shifted_min(lab, dr, dc, out):
    """min(out, lab shifted by (dr, dc)) ignoring zeros of the shift."""
    h, w = lab.shape
    src = lab[max(-dr, 0):h - max(dr, 0), max(-dc, 0):w - max(dc, 0)]
    dst = out[max(dr, 0):h - max(-dr, 0), max(dc, 0):w - max(-dc, 0)]
    np.minimum(dst, np.where(src > 0, src, np.iinfo(np.int64).max), out=dst)


def label(fg, connectivity=8):
    """Label connected foreground components.

    Returns (labels int32, count). Components are numbered 1..count in
    row-major order of each component's first pixel.
    """
    fg = np.ascontiguousarray(fg) != 0
    h, w = fg.shape
    big = np.iinfo(np.int64).max
    lab = np.where(fg, np.arange(1, h * w + 1, dtype=np.int64).reshape(h, w), big)
    shifts = _SHIFTS_8 if connectivity == 8 else _SHIFTS_4
    while True:
        prev = lab.copy()
        for dr, dc in shifts:
            _shifted_min(lab, dr, dc, lab)
            lab[~fg] = big
        if np.array_equal(lab, prev):
            break
    lab[~fg] = 0
    roots = np.unique(lab[fg])
    out = np.zeros((h, w), dtype=np.int32)
    if roots.size:
        remap = np.zeros(int(roots[-1]) + 1, dtype=np.int32)
        remap[roots] = np.arange(1, roots.size + 1, dtype=np.int32)
        out[fg] = remap[lab[fg]]
    return out, int(roots.size)


def fill_holes(fg):
    """Fill background regions (4-connected) not reaching the raster border."""
    fg = np.ascontiguousarray(fg) != 0
    bg_lab, n = label(~fg, connectivity=4)
    if n == 0:
        return fg.astype(np.uint8)
    border = np.unique(np.concatenate([
        bg_lab[0, :], bg_lab[-1, :], bg_lab[:, 0], bg_lab[:, -1]]))
    border = border[border > 0]
    keep_open = np.isin(bg_lab, border)
    return (fg | ((bg_lab > 0) & ~keep_open)).astype(np.uint8)


def watershed(elevation, markers, allowed):
    """Marker-seeded flooding with a 1-px watershed line (8-connected).

    Floods `elevation` from the positive labels in `markers`, restricted to
    pixels where `allowed` is nonzero. Pixels reached by two different
    labels at their flooding front stay 0 (the watershed line).
    """
    elevation = np.asarray(elevation, dtype=np.float64)
    h, w = elevation.shape
    out = np.zeros((h, w), dtype=np.int32)
    state = np.zeros((h, w), dtype=np.uint8)  # 0 unseen, 1 queued, 2 done
    allowed = np.asarray(allowed) != 0
    heap = []
    order = 0
    mr, mc = np.nonzero(markers > 0)
    for r, c in zip(mr.tolist(), mc.tolist()):
        if not allowed[r, c]:
            continue
        out[r, c] = markers[r, c]
        state[r, c] = 2
        for dr, dc in _SHIFTS_8:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and state[rr, cc] == 0 and allowed[rr, cc]:
                state[rr, cc] = 1
                heapq.heappush(heap, (elevation[rr, cc], order, rr, cc))
                order += 1
    while heap:
        _, _, r, c = heapq.heappop(heap)
        lab = 0
        boundary = False
        for dr, dc in _SHIFTS_8:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and state[rr, cc] == 2 and out[rr, cc] > 0:
                if lab == 0:
                    lab = out[rr, cc]
                elif out[rr, cc] != lab:
                    boundary = True
        state[r, c] = 2
        if boundary or lab == 0:
            continue
        out[r, c] = lab
        for dr, dc in _SHIFTS_8:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and state[rr, cc] == 0 and allowed[rr, cc]:
                state[rr, cc] = 1
                heapq.heappush(heap, (elevation[rr, cc], order, rr, cc))
                order += 1
    return out


def gbt_hist(binned, grad, hess, node_of, n_nodes, n_bins):
    """Per-(node, feature, bin) gradient/hessian histograms.

    binned: (N, F) uint8 bin indices; node_of: (N,) int32, -1 = skip.
    Returns (G, H) shaped (n_nodes, F, n_bins) float64.
    """
    n, f = binned.shape
    mask = node_of >= 0
    if not mask.any():
        z = np.zeros((n_nodes, f, n_bins))
        return z, z.copy()
    b = binned[mask].astype(np.int64)
    base = node_of[mask].astype(np.int64) * f * n_bins
    idx = (base[:, None] + np.arange(f, dtype=np.int64) * n_bins + b).ravel()
    size = n_nodes * f * n_bins
    g = np.bincount(idx, weights=np.repeat(grad[mask], f), minlength=size)
    h = np.bincount(idx, weights=np.repeat(hess[mask], f), minlength=size)
    return g.reshape(n_nodes, f, n_bins), h.reshape(n_nodes, f, n_bins)


def gbt_predict(x, feat, thr, value, learning_rate, base_margin):
    """Sum of tree outputs for all samples.

    Trees are complete binary arrays: feat/thr/value shaped (T, n_nodes),
    feat < 0 marks a leaf. Children of node i are 2i+1 / 2i+2.
    """
    n = x.shape[0]
    n_trees, n_nodes = feat.shape
    depth = int(np.log2(n_nodes + 1)) - 1
    margins = np.full(n, base_margin, dtype=np.float64)
    rows = np.arange(n)
    for t in range(n_trees):
        node = np.zeros(n, dtype=np.int64)
        for _ in range(depth):
            f = feat[t, node]
            split = f >= 0
            fx = x[rows, np.where(split, f, 0)]
            right = (fx >= thr[t, node]) & split
            node = np.where(split, 2 * node + 1 + right, node)
        margins += learning_rate * value[t, node]
    return margins
