"""Pseudolabel generation: adaptive thresholding, morphology, LAIR.

The output of this stage is the instance mask used as the self-supervision
target for the pixel classifier. Everything runs on the p-value map (dark
nuclei = low values) and the HSI conversion of the stain-separated image.
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from . import backend
from .core import (build_histogram, connected_components, instance_slices,
                   pixel_hull, polygon_area)


@dataclass(frozen=True)
class BimodalFit:
    t1: float  # darker peak intensity
    t2: float  # brighter peak intensity
    c1: float  # normalized peak heights
    c2: float
    valid: bool


@dataclass(frozen=True)
class ThresholdResult:
    t_o: float
    t_c: float
    t_hat: float
    lam: float


@dataclass(frozen=True)
class LairConfig:
    patch_size: int = 200
    nu: float = 0.1
    similarity_threshold: float = 0.7
    size_percentile_split: float = 0.6


# Bimodality criteria for 256-bin local histograms; exposed through
# PipelineConfig, defaults tuned for ~2500-pixel patches.
SMOOTH_WIDTH = 5
PEAK_PROMINENCE = 0.05
PEAK_SEPARATION = 16
VALLEY_MAX = 0.5


def detect_bimodal(hist, smooth_width=SMOOTH_WIDTH, prominence=PEAK_PROMINENCE,
                   separation=PEAK_SEPARATION, valley_max=VALLEY_MAX):
    """Find the two dominant histogram peaks.

    The histogram is smoothed with a moving average; peaks must clear a
    prominence of 5% of the max count and sit at least 16 bins apart. The
    two peaks must also be separated by a real gap: the histogram between
    them has to drop below valley_max times the smaller peak, otherwise
    they are ripples of a single mode (a sampled uniform histogram must
    not count as bimodal). Fewer than two such peaks -> valid=False.
    """
    smoothed = np.convolve(hist.bins.astype(np.float64),
                           np.ones(smooth_width) / smooth_width, mode="same")
    top = smoothed.max()
    if top <= 0:
        return BimodalFit(0.0, 0.0, 0.0, 0.0, False)
    # zero padding lets find_peaks see maxima at the bin range ends
    padded = np.concatenate([[0.0], smoothed, [0.0]])
    peaks, props = find_peaks(padded, prominence=prominence * top,
                              distance=separation)
    if peaks.size < 2:
        return BimodalFit(0.0, 0.0, 0.0, 0.0, False)
    order = peaks[np.argsort(props["prominences"])[::-1]] - 1
    b2 = int(order[0])
    for cand in order[1:]:
        b1 = int(cand)
        lo, hi = min(b1, b2), max(b1, b2)
        valley = smoothed[lo:hi + 1].min()
        if valley <= valley_max * min(smoothed[lo], smoothed[hi]):
            return BimodalFit(
                t1=lo / 255.0, t2=hi / 255.0,
                c1=float(smoothed[lo] / top), c2=float(smoothed[hi] / top),
                valid=True)
    return BimodalFit(0.0, 0.0, 0.0, 0.0, False)


def adaptive_threshold(fit, lam):
    """Adjusted threshold from the two-peak geometry.

    In normalized (intensity, count) axes: L12 joins the peaks, T_o is the
    peak midpoint, T_c the intensity-axis intercept of the perpendicular to
    L12 through L12's point at T_o. The adjusted threshold is
    T_o + lam * (T_o - T_c), clamped inside (T1, T2).
    """
    if not fit.valid:
        raise ValueError("adaptive_threshold requires a valid bimodal fit")
    t_o = 0.5 * (fit.t1 + fit.t2)
    slope = (fit.c2 - fit.c1) / (fit.t2 - fit.t1)
    y_o = 0.5 * (fit.c1 + fit.c2)
    t_c = t_o + y_o * slope
    t_hat = t_o + lam * (t_o - t_c)
    t_hat = min(max(t_hat, np.nextafter(fit.t1, fit.t2)),
                np.nextafter(fit.t2, fit.t1))
    return ThresholdResult(t_o=t_o, t_c=t_c, t_hat=float(t_hat), lam=lam)


def _grid(size, patch):
    if size <= patch:
        return [(0, size)]
    spans = [(e, e + patch) for e in range(0, size - patch + 1, patch)]
    spans[-1] = (spans[-1][0], size)
    return spans


def _halves(lo, hi):
    mid = (lo + hi) // 2
    if mid == lo or mid == hi:
        return [(lo, hi)]
    return [(lo, mid), (mid, hi)]


def _fit_threshold(region, lam, use_adaptive, bimodal_kwargs):
    fit = detect_bimodal(build_histogram(region), **bimodal_kwargs)
    if not fit.valid:
        return None
    res = adaptive_threshold(fit, lam)
    return res.t_hat if use_adaptive else res.t_o


def threshold_multiscale(pmap, lam, patch=50, use_adaptive=True,
                         fallback_order="sub-first", **bimodal_kwargs):
    """Binarize the p-value map patch-wise (foreground = pixel < threshold).

    Patches without a bimodal histogram retry on their half-size quadrants
    and on the enclosing double-size context (order per fallback_order);
    pixels where every scale fails stay background.
    """
    pmap = np.asarray(pmap, dtype=np.float64)
    h, w = pmap.shape
    out = np.zeros((h, w), dtype=np.uint8)
    rows = _grid(h, patch)
    cols = _grid(w, patch)
    for pi, (r0, r1) in enumerate(rows):
        for pj, (c0, c1) in enumerate(cols):
            region = pmap[r0:r1, c0:c1]
            t = _fit_threshold(region, lam, use_adaptive, bimodal_kwargs)
            if t is not None:
                out[r0:r1, c0:c1] = region < t
                continue
            cr0 = rows[pi - pi % 2][0]
            cr1 = rows[min(pi - pi % 2 + 1, len(rows) - 1)][1]
            cc0 = cols[pj - pj % 2][0]
            cc1 = cols[min(pj - pj % 2 + 1, len(cols) - 1)][1]
            context = _fit_threshold(pmap[cr0:cr1, cc0:cc1], lam,
                                     use_adaptive, bimodal_kwargs)
            if fallback_order == "context-first" and context is not None:
                out[r0:r1, c0:c1] = region < context
                continue
            for q0, q1 in _halves(r0, r1):
                for s0, s1 in _halves(c0, c1):
                    sub = pmap[q0:q1, s0:s1]
                    t = _fit_threshold(sub, lam, use_adaptive, bimodal_kwargs)
                    if t is None and fallback_order != "context-first":
                        t = context
                    if t is not None:
                        out[q0:q1, s0:s1] = sub < t
    return out


def _thick_line(p0, p1):
    """4-connected raster segment (diagonal steps add an extra pixel)."""
    r0, c0 = p0
    r1, c1 = p1
    n = max(abs(r1 - r0), abs(c1 - c0))
    if n == 0:
        return [(r0, c0)]
    pts = []
    prev = None
    for i in range(n + 1):
        r = r0 + round(i * (r1 - r0) / n)
        c = c0 + round(i * (c1 - c0) / n)
        if prev is not None and r != prev[0] and c != prev[1]:
            pts.append((prev[0], c))
        pts.append((r, c))
        prev = (r, c)
    return pts


def _boundary_coords(block):
    # a pixel is boundary if any 4-neighbor (or the bbox edge) is off
    padded = np.pad(block, 1)
    nb = (padded[:-2, 1:-1] & padded[2:, 1:-1]
          & padded[1:-1, :-2] & padded[1:-1, 2:])
    return np.nonzero(block & ~nb)


def _segment_distances(points, v0, v1):
    d = v1 - v0
    len2 = float(d @ d)
    if len2 < 1e-18:
        return np.linalg.norm(points - v0, axis=1)
    t = np.clip((points - v0) @ d / len2, 0.0, 1.0)
    proj = v0 + t[:, None] * d
    return np.linalg.norm(points - proj, axis=1)


def split_concave(block, min_area, solidity_cutoff=0.85, min_depth=1.5,
                  max_splits=2):
    """Split a concave instance along its two deepest concavity points.

    `block` is a boolean bbox-local mask of one instance. Cuts happen only
    when the solidity is below the cutoff and two sufficiently deep boundary
    points sit on distinct hull edges; recursion is capped at `max_splits`
    levels per original instance. Returns a list of boolean masks (possibly
    just the input).
    """
    block = np.asarray(block, dtype=bool)
    area = int(block.sum())
    if max_splits <= 0 or area < 2 * min_area:
        return [block]
    rows, cols = np.nonzero(block)
    hull = pixel_hull(rows, cols)
    hull_area = polygon_area(hull) if len(hull) >= 3 else float(area)
    if area / hull_area >= solidity_cutoff:
        return [block]
    br, bc = _boundary_coords(block)
    pts = np.stack([br, bc], axis=1).astype(np.float64)
    n_edges = len(hull)
    dists = np.stack([
        _segment_distances(pts, hull[i], hull[(i + 1) % n_edges])
        for i in range(n_edges)], axis=1)
    edge_of = dists.argmin(axis=1)
    depth = dists.min(axis=1)
    deep = depth >= min_depth
    if deep.sum() < 2:
        return [block]
    order = np.argsort(-depth, kind="stable")
    i1 = order[0]
    if depth[i1] < min_depth:
        return [block]
    i2 = None
    for i in order[1:]:
        if depth[i] >= min_depth and edge_of[i] != edge_of[i1]:
            i2 = i
            break
    if i2 is None:
        return [block]
    cut = block.copy()
    for r, c in _thick_line((int(br[i1]), int(bc[i1])), (int(br[i2]), int(bc[i2]))):
        if 0 <= r < cut.shape[0] and 0 <= c < cut.shape[1]:
            cut[r, c] = False
    labels, n = backend.label(cut.astype(np.uint8), connectivity=8)
    if n < 2:
        return [block]
    pieces = []
    for lab in range(1, n + 1):
        piece = labels == lab
        if piece.sum() < min_area:
            continue
        pieces.extend(split_concave(piece, min_area, solidity_cutoff,
                                    min_depth, max_splits - 1))
    return pieces if pieces else [block]


def morph_refine(binary, min_area=30, solidity_cutoff=0.85, min_depth=1.5,
                 max_splits=2):
    """Hole filling, small-instance removal and concavity splitting."""
    binary = np.asarray(binary) != 0
    filled = backend.fill_holes(binary.astype(np.uint8)).astype(bool)
    labels, n = backend.label(filled.astype(np.uint8), connectivity=8)
    if n == 0:
        return labels
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    keep = areas >= min_area
    keep[0] = False
    final = np.zeros_like(filled)
    boxes = instance_slices(labels)
    for lab, (rs, cs) in boxes.items():
        if not keep[lab]:
            continue
        block = labels[rs, cs] == lab
        for piece in split_concave(block, min_area, solidity_cutoff,
                                   min_depth, max_splits):
            final[rs, cs] |= piece
    return connected_components(final.astype(np.uint8))


def lair_similarity(x, x_ref, nu):
    """Gaussian-kernel similarity between a query and the reference mean."""
    d = np.asarray(x, dtype=np.float64) - np.asarray(x_ref, dtype=np.float64)
    return float(np.exp(-nu * float(d @ d)))


def _instance_color_stats(mask, h_hsi):
    """Per-label (mean, std) of each HSI channel plus centroid and area."""
    labs = mask[mask > 0].astype(np.int64)
    hi = int(labs.max())
    rr, cc = np.nonzero(mask > 0)
    counts = np.bincount(labs, minlength=hi + 1)
    stats = {}
    sums = np.empty((3, hi + 1))
    sqs = np.empty((3, hi + 1))
    for ch in range(3):
        vals = h_hsi[rr, cc, ch]
        sums[ch] = np.bincount(labs, weights=vals, minlength=hi + 1)
        sqs[ch] = np.bincount(labs, weights=vals * vals, minlength=hi + 1)
    crow = np.bincount(labs, weights=rr, minlength=hi + 1)
    ccol = np.bincount(labs, weights=cc, minlength=hi + 1)
    for lab in np.nonzero(counts)[0]:
        if lab == 0:
            continue
        n = counts[lab]
        mean = sums[:, lab] / n
        var = np.clip(sqs[:, lab] / n - mean ** 2, 0.0, None)
        stats[int(lab)] = {
            "area": int(n),
            "centroid": (crow[lab] / n, ccol[lab] / n),
            "feature": np.concatenate([mean, np.sqrt(var)]),
        }
    return stats


def lair_filter(mask, h_hsi, cfg=LairConfig()):
    """Remove small instances that look anomalous against local large ones.

    Per 200x200 patch (instances assigned by centroid), the instances above
    the area-percentile split form the reference ensemble; queries whose
    Gaussian similarity to the ensemble mean falls strictly below the
    threshold are deleted. Patches with fewer than two references are left
    untouched.
    """
    mask = np.asarray(mask)
    if not (mask > 0).any():
        return mask.copy()
    stats = _instance_color_stats(mask, np.asarray(h_hsi, dtype=np.float64))
    h, w = mask.shape
    patches = {}
    for lab, st in stats.items():
        r, c = st["centroid"]
        key = (min(int(r) // cfg.patch_size, (h - 1) // cfg.patch_size),
               min(int(c) // cfg.patch_size, (w - 1) // cfg.patch_size))
        patches.setdefault(key, []).append(lab)
    removed = []
    for labs in patches.values():
        if len(labs) < 3:
            continue
        areas = np.array([stats[lab]["area"] for lab in labs], dtype=np.float64)
        feats = np.stack([stats[lab]["feature"] for lab in labs])
        lo = feats.min(axis=0)
        span = feats.max(axis=0) - lo
        span[span < 1e-12] = 1.0
        feats = (feats - lo) / span
        cutoff = np.percentile(areas, cfg.size_percentile_split * 100.0)
        ref = areas >= cutoff
        if ref.sum() < 2 or ref.all():
            continue
        x_ref = feats[ref].mean(axis=0)
        for i, lab in enumerate(labs):
            if ref[i]:
                continue
            if lair_similarity(feats[i], x_ref, cfg.nu) < cfg.similarity_threshold:
                removed.append(lab)
    out = mask.copy()
    if removed:
        out[np.isin(out, removed)] = 0
    return out
