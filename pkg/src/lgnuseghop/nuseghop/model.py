"""Fitting and applying the self-supervised pixel classifier.

The model is fitted per tile from its own pseudolabel: Saab kernels and
spectral PCA bases are estimated from streamed statistics over sampled
windows, features are ranked by a single-split cross-entropy score against
the pseudolabel, and a gradient-boosted tree ensemble is trained on the
selected columns. Inference computes only the selected feature blocks.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..gbt import GradientBoostedTrees, fit_gbt, sigmoid
from .features import (FeaturePlan, WindowFeaturizer, gather_windows,
                       layer_cuboids, pad_image, saab_maps)
from .saab import EmptyKernel, PcaBasis, SaabKernel, pca_from_moments, saab_from_scatter

BATCH = 8192
SCORE_BINS = 32


class DegeneratePseudolabel(ValueError):
    pass


@dataclass
class NuSegHopConfig:
    window: int = 9
    filter1: int = 3
    filter2: int = 3
    energy_threshold: float = 1e-3
    max_spectral_dims: int = 10
    n_selected_features: int = 100
    n_train_pixels: int = 50_000
    trees: int = 100
    tree_depth: int = 4
    learning_rate: float = 0.075


@dataclass
class NuSegHopModel:
    config: NuSegHopConfig
    layer1: SaabKernel
    layer2: list            # SaabKernel | None per layer-1 channel
    spectral1: list         # PcaBasis | None per layer-1 channel
    spectral2: list         # per channel: list of PcaBasis | None
    selected: np.ndarray    # sorted global feature indices
    classifier: GradientBoostedTrees
    feature_total: int = 0
    # training sample bookkeeping (diagnostics; not serialized)
    train_rows: np.ndarray = None
    train_cols: np.ndarray = None
    train_labels: np.ndarray = None

    def featurizer(self):
        return WindowFeaturizer(self.layer1, self.layer2, self.spectral1,
                                self.spectral2, window=self.config.window,
                                filt1=self.config.filter1,
                                filt2=self.config.filter2)

    def parameter_count(self):
        return self.featurizer().parameter_count()


def _entropy(p):
    p = np.clip(p, 0.0, 1.0)
    out = np.zeros_like(p)
    for q in (p, 1.0 - p):
        nz = q > 0
        out[nz] -= q[nz] * np.log(q[nz])
    return out


def split_scores(tot_hist, pos_hist):
    """Per-feature best weighted split cross-entropy (lower = better).

    Histograms are (F, B) counts; candidate thresholds are the B-1 interior
    bin boundaries.
    """
    tot_hist = np.asarray(tot_hist, dtype=np.float64)
    pos_hist = np.asarray(pos_hist, dtype=np.float64)
    n = tot_hist.sum(axis=1, keepdims=True)
    nl = np.cumsum(tot_hist, axis=1)[:, :-1]
    pl = np.cumsum(pos_hist, axis=1)[:, :-1]
    nr = n - nl
    pr = pos_hist.sum(axis=1, keepdims=True) - pl
    with np.errstate(invalid="ignore", divide="ignore"):
        hl = _entropy(np.where(nl > 0, pl / np.where(nl > 0, nl, 1), 0.0))
        hr = _entropy(np.where(nr > 0, pr / np.where(nr > 0, nr, 1), 0.0))
    loss = (nl * hl + nr * hr) / n
    return loss.min(axis=1)


def _bin_columns(x, lo, span, n_bins):
    b = ((x - lo) / span * n_bins).astype(np.int64)
    return np.clip(b, 0, n_bins - 1)


def select_discriminant(features, labels, k=100, n_bins=SCORE_BINS):
    """Indices of the k most discriminant columns (ties to lower index).

    Score = weighted binary cross-entropy of the best single-threshold
    split over the n_bins-1 uniform candidate thresholds of each column.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels) > 0
    n, d = x.shape
    if d <= k:
        return np.arange(d, dtype=np.int64)
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    tot = np.zeros((d, n_bins))
    pos = np.zeros((d, n_bins))
    offsets = np.arange(d, dtype=np.int64) * n_bins
    bins = _bin_columns(x, lo, span, n_bins) + offsets
    tot += np.bincount(bins.ravel(), minlength=d * n_bins).reshape(d, n_bins)
    pos += np.bincount(bins[y].ravel(), minlength=d * n_bins).reshape(d, n_bins)
    scores = split_scores(tot, pos)
    return np.sort(np.argsort(scores, kind="stable")[:k]).astype(np.int64)


def _sample_coords(pseudolabel, n_total, rng):
    fg = np.flatnonzero(pseudolabel.ravel() > 0)
    bg = np.flatnonzero(pseudolabel.ravel() == 0)
    if fg.size == 0 or bg.size == 0:
        raise DegeneratePseudolabel("pseudolabel has a single class")
    per_class = min(n_total // 2, fg.size, bg.size)
    take_fg = rng.choice(fg, size=per_class, replace=False)
    take_bg = rng.choice(bg, size=per_class, replace=False)
    flat = np.concatenate([take_fg, take_bg])
    y = np.concatenate([np.ones(per_class, np.int8), np.zeros(per_class, np.int8)])
    w = pseudolabel.shape[1]
    return flat // w, flat % w, y


def _batches(n, batch=BATCH):
    for start in range(0, n, batch):
        yield start, min(start + batch, n)


def fit_model(h_hsi, pseudolabel, cfg=None, rng_seed=0):
    """Fit the full pixel-classification model from a pseudolabel.

    Accepts a single (hsi, pseudolabel) pair or parallel lists of them for
    the multi-tile mode; sampling is split evenly across tiles.
    """
    cfg = cfg or NuSegHopConfig()
    tiles = h_hsi if isinstance(h_hsi, (list, tuple)) else [h_hsi]
    labels = pseudolabel if isinstance(pseudolabel, (list, tuple)) else [pseudolabel]
    rng = np.random.default_rng(rng_seed)
    half = cfg.window // 2
    rows_all, cols_all, y_all, tile_of = [], [], [], []
    per_tile = max(cfg.n_train_pixels // len(tiles), 2)
    for ti, (hsi, lab) in enumerate(zip(tiles, labels)):
        r, c, y = _sample_coords(np.asarray(lab), per_tile, rng)
        rows_all.append(r)
        cols_all.append(c)
        y_all.append(y)
        tile_of.append(np.full(r.size, ti))
    rows = np.concatenate(rows_all)
    cols = np.concatenate(cols_all)
    y = np.concatenate(y_all).astype(np.int8)
    tile_of = np.concatenate(tile_of)
    padded = [pad_image(np.asarray(t), half) for t in tiles]
    n = rows.size

    def batch_windows(lo, hi):
        parts = []
        for ti in range(len(tiles)):
            sel = tile_of[lo:hi] == ti
            if sel.any():
                parts.append((sel, gather_windows(
                    padded[ti], rows[lo:hi][sel], cols[lo:hi][sel], cfg.window)))
        if len(parts) == 1:
            return parts[0][1]
        out = np.empty((hi - lo, cfg.window, cfg.window, 3), dtype=np.float32)
        for sel, w in parts:
            out[sel] = w
        return out

    te, cap = cfg.energy_threshold, cfg.max_spectral_dims
    k1 = cfg.filter1 * cfg.filter1 * 3
    scatter1 = np.zeros((k1, k1))
    for lo, hi in _batches(n):
        cub = layer_cuboids(batch_windows(lo, hi), cfg.filter1).astype(np.float64)
        centered = (cub - cub.mean(axis=-1, keepdims=True)).reshape(-1, k1)
        scatter1 += centered.T @ centered
    layer1 = saab_from_scatter(scatter1, te, cap, input_dims=(cfg.filter1, cfg.filter1, 3))
    c1 = layer1.m_kept + 1

    l1p = cfg.window * cfg.window
    pooled_side = -(-cfg.window // 2)
    l2p = pooled_side * pooled_side
    k2 = cfg.filter2 * cfg.filter2
    fz = WindowFeaturizer(layer1, [None] * c1, [None] * c1,
                          [[None]] * c1, window=cfg.window,
                          filt1=cfg.filter1, filt2=cfg.filter2)
    s1_sum = np.zeros((c1, l1p))
    s1_sq = np.zeros((c1, l1p, l1p))
    scatter2 = np.zeros((c1, k2, k2))
    for lo, hi in _batches(n):
        f1 = fz.l1_maps(batch_windows(lo, hi)).astype(np.float64)
        for c in range(c1):
            x = f1[:, :, c]
            s1_sum[c] += x.sum(axis=0)
            s1_sq[c] += x.T @ x
        pooled = fz.pooled(f1.astype(np.float32)).astype(np.float64)
        for c in range(c1):
            cub = layer_cuboids(pooled[..., c:c + 1], cfg.filter2)
            centered = (cub - cub.mean(axis=-1, keepdims=True)).reshape(-1, k2)
            scatter2[c] += centered.T @ centered

    layer2 = []
    for c in range(c1):
        try:
            layer2.append(saab_from_scatter(
                scatter2[c], te, cap, input_dims=(cfg.filter2, cfg.filter2, 1)))
        except EmptyKernel:
            layer2.append(None)  # constant map: DC carries everything
    spectral1 = [pca_from_moments(s1_sum[c], s1_sq[c], n, te, cap)
                 for c in range(c1)]

    c2 = [(k.m_kept + 1) if k is not None else 1 for k in layer2]
    fz = WindowFeaturizer(layer1, layer2, spectral1,
                          [[None] * c2[c] for c in range(c1)],
                          window=cfg.window, filt1=cfg.filter1, filt2=cfg.filter2)
    s2_sum = [np.zeros((c2[c], l2p)) for c in range(c1)]
    s2_sq = [np.zeros((c2[c], l2p, l2p)) for c in range(c1)]
    for lo, hi in _batches(n):
        f1 = fz.l1_maps(batch_windows(lo, hi))
        pooled = fz.pooled(f1)
        for c in range(c1):
            f2 = fz.l2_map_batch(pooled, c).astype(np.float64)
            for q in range(c2[c]):
                x = f2[:, :, q]
                s2_sum[c][q] += x.sum(axis=0)
                s2_sq[c][q] += x.T @ x
    spectral2 = [[pca_from_moments(s2_sum[c][q], s2_sq[c][q], n, te, cap)
                  for q in range(c2[c])] for c in range(c1)]

    fz = WindowFeaturizer(layer1, layer2, spectral1, spectral2,
                          window=cfg.window, filt1=cfg.filter1, filt2=cfg.filter2)
    d = fz.layout.total
    k = min(cfg.n_selected_features, d)
    lo_v = np.full(d, np.inf)
    hi_v = np.full(d, -np.inf)
    for lo, hi in _batches(n):
        x = fz.full_features(batch_windows(lo, hi)).astype(np.float64)
        np.minimum(lo_v, x.min(axis=0), out=lo_v)
        np.maximum(hi_v, x.max(axis=0), out=hi_v)
    span = np.where(hi_v - lo_v > 0, hi_v - lo_v, 1.0)
    tot = np.zeros((d, SCORE_BINS))
    pos = np.zeros((d, SCORE_BINS))
    offsets = np.arange(d, dtype=np.int64) * SCORE_BINS
    for lo, hi in _batches(n):
        x = fz.full_features(batch_windows(lo, hi)).astype(np.float64)
        yb = y[lo:hi] > 0
        for f0 in range(0, d, 512):
            f1r = min(f0 + 512, d)
            bins = _bin_columns(x[:, f0:f1r], lo_v[f0:f1r], span[f0:f1r],
                                SCORE_BINS) + offsets[f0:f1r]
            tot += np.bincount(bins.ravel(), minlength=d * SCORE_BINS
                               ).reshape(d, SCORE_BINS)
            pos += np.bincount(bins[yb].ravel(), minlength=d * SCORE_BINS
                               ).reshape(d, SCORE_BINS)
    scores = split_scores(tot, pos)
    selected = np.sort(np.argsort(scores, kind="stable")[:k]).astype(np.int64)

    plan = FeaturePlan(fz.layout, selected)
    x_sel = np.empty((n, selected.size), dtype=np.float32)
    for lo, hi in _batches(n):
        x_sel[lo:hi] = fz.planned_features(batch_windows(lo, hi), plan)
    classifier = fit_gbt(x_sel, y.astype(np.float64), n_trees=cfg.trees,
                         depth=cfg.tree_depth, learning_rate=cfg.learning_rate)
    return NuSegHopModel(config=cfg, layer1=layer1, layer2=layer2,
                         spectral1=spectral1, spectral2=spectral2,
                         selected=selected, classifier=classifier,
                         feature_total=d, train_rows=rows, train_cols=cols,
                         train_labels=y)


def featurize_pixels(h_hsi, model, rows, cols):
    """Selected feature columns for arbitrary pixel coordinates."""
    half = model.config.window // 2
    padded = pad_image(np.asarray(h_hsi), half)
    fz = model.featurizer()
    plan = FeaturePlan(fz.layout, model.selected)
    out = np.empty((rows.size, model.selected.size), dtype=np.float32)
    for lo, hi in _batches(rows.size):
        win = gather_windows(padded, rows[lo:hi], cols[lo:hi], model.config.window)
        out[lo:hi] = fz.planned_features(win, plan)
    return out


def predict_heatmap(h_hsi, model, threads=1):
    """Foreground probability for every pixel of the tile."""
    hsi = np.asarray(h_hsi)
    h, w = hsi.shape[:2]
    half = model.config.window // 2
    padded = pad_image(hsi, half)
    fz = model.featurizer()
    plan = FeaturePlan(fz.layout, model.selected)
    out = np.empty((h, w), dtype=np.float32)
    rows_per_task = max(1, BATCH // max(w, 1))
    spans = [(r0, min(r0 + rows_per_task, h))
             for r0 in range(0, h, rows_per_task)]

    def run(span):
        r0, r1 = span
        rr, cc = np.mgrid[r0:r1, 0:w]
        win = gather_windows(padded, rr.ravel(), cc.ravel(), model.config.window)
        x = fz.planned_features(win, plan)
        margins = model.classifier.decision_margin(x)
        out[r0:r1] = sigmoid(margins).reshape(r1 - r0, w)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, spans))
    else:
        for span in spans:
            run(span)
    return np.clip(out, 0.0, 1.0)
