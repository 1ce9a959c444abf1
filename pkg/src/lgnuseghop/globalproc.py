"""Whole-image post-processing of the probability heatmap.

Chain: pull out the instances the classifier is already sure about, detect
blob seeds in what remains, grow them with a marker watershed, binarize at
the low probability threshold, then reject instances whose appearance sides
with the background ensemble.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.optimize import minimize

from . import backend
from .core import connected_components, instance_slices


@dataclass
class GlobalConfig:
    confident_mean_prob: float = 0.95
    log_blob_threshold: float = 0.05
    log_sigma_min: float = 2.0
    log_sigma_max: float = 10.0
    log_sigma_steps: int = 8
    t_p: float = 0.35
    rbf_gamma: float = 0.0        # 0 -> 1 / (n_features * var)
    rbf_regularization: float = 1.0
    removal_prob_cutoff: float = 0.5
    min_instances_for_filter: int = 10
    elevation: str = "complement"  # or "gradient"
    min_area: int = 30


@dataclass(frozen=True)
class SeedSet:
    rows: np.ndarray
    cols: np.ndarray
    sigmas: np.ndarray
    responses: np.ndarray

    def __len__(self):
        return self.rows.size

    @staticmethod
    def empty():
        z = np.zeros(0)
        return SeedSet(z.astype(np.int64), z.astype(np.int64), z, z)


def filter_confident(heatmap, mask, cutoff=0.95):
    """Split off instances whose mean probability exceeds the cutoff.

    Returns (confident instance mask, filtered heatmap P'); the filtered
    heatmap is zeroed exactly on the confident pixels and untouched
    elsewhere.
    """
    heatmap = np.asarray(heatmap, dtype=np.float64)
    mask = np.asarray(mask)
    confident = np.zeros_like(mask)
    p_prime = heatmap.copy()
    if not (mask > 0).any():
        return confident, p_prime
    labs = mask[mask > 0].astype(np.int64)
    hi = int(labs.max())
    counts = np.bincount(labs, minlength=hi + 1)
    sums = np.bincount(labs, weights=heatmap[mask > 0], minlength=hi + 1)
    with np.errstate(invalid="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    keep = np.nonzero(means > cutoff)[0]
    keep = keep[keep > 0]
    if keep.size:
        sel = np.isin(mask, keep)
        confident[sel] = mask[sel]
        p_prime[sel] = 0.0
    return confident, p_prime


def detect_log_maxima(p_prime, cfg=GlobalConfig()):
    """Blob seeds from scale-normalized LoG maxima of the filtered heatmap."""
    p = np.asarray(p_prime, dtype=np.float64)
    sigmas = np.geomspace(cfg.log_sigma_min, cfg.log_sigma_max,
                          cfg.log_sigma_steps)
    stack = np.stack([-s * s * ndimage.gaussian_laplace(p, s) for s in sigmas])
    peak = ndimage.maximum_filter(stack, size=(3, 3, 3), mode="nearest")
    cand = np.nonzero((stack == peak) & (stack > cfg.log_blob_threshold))
    if cand[0].size == 0:
        return SeedSet.empty()
    resp = stack[cand]
    order = np.lexsort((cand[2], cand[1], cand[0], -resp))
    si, ri, ci = cand[0][order], cand[1][order], cand[2][order]
    resp = resp[order]
    kept = []
    for k in range(resp.size):
        s = sigmas[si[k]]
        ok = True
        for j in kept:
            lim = max(s, sigmas[si[j]])
            if (ri[k] - ri[j]) ** 2 + (ci[k] - ci[j]) ** 2 < lim * lim:
                ok = False
                break
        if ok:
            kept.append(k)
    kept = np.array(kept, dtype=np.int64)
    return SeedSet(rows=ri[kept].astype(np.int64), cols=ci[kept].astype(np.int64),
                   sigmas=sigmas[si[kept]], responses=resp[kept])


def watershed_refine(p_prime, seeds, cfg=GlobalConfig()):
    """Grow one basin per seed on the heatmap complement.

    Flooding is restricted to pixels with P' >= T_p / 2; seeds falling
    below that floor are dropped (they could not flood anywhere).
    """
    p = np.asarray(p_prime, dtype=np.float64)
    out_empty = np.zeros(p.shape, dtype=np.int32)
    if len(seeds) == 0:
        return out_empty
    allowed = p >= cfg.t_p / 2.0
    markers = np.zeros(p.shape, dtype=np.int32)
    next_label = 1
    for r, c in zip(seeds.rows.tolist(), seeds.cols.tolist()):
        if allowed[r, c] and markers[r, c] == 0:
            markers[r, c] = next_label
            next_label += 1
    if next_label == 1:
        return out_empty
    if cfg.elevation == "gradient":
        gy, gx = np.gradient(p)
        elevation = np.hypot(gy, gx)
    else:
        elevation = 1.0 - p
    return backend.watershed(elevation, markers, allowed.astype(np.uint8))


def binarize_merge(p_prime, watershed_mask, confident, t_p=0.35, min_area=30):
    """Final instances: thresholded basins plus the confident set.

    watershed_mask may be None (stage disabled): the thresholded heatmap is
    then labeled directly. Confident instances win every overlap and are
    appended with fresh labels.
    """
    p = np.asarray(p_prime, dtype=np.float64)
    confident = np.asarray(confident)
    conf_fg = confident > 0
    out = np.zeros(p.shape, dtype=np.int32)
    next_label = 1
    hot = (p >= t_p) & ~conf_fg
    if watershed_mask is None:
        pieces = connected_components(hot.astype(np.uint8))
        for lab, (rs, cs) in instance_slices(pieces).items():
            block = pieces[rs, cs] == lab
            if block.sum() >= min_area:
                out[rs, cs][block] = next_label
                next_label += 1
    else:
        ws = np.asarray(watershed_mask)
        for lab, (rs, cs) in instance_slices(ws).items():
            block = (ws[rs, cs] == lab) & hot[rs, cs]
            if not block.any():
                continue
            sub, n = backend.label(block.astype(np.uint8), connectivity=8)
            for piece_lab in range(1, n + 1):
                piece = sub == piece_lab
                if piece.sum() >= min_area:
                    out[rs, cs][piece] = next_label
                    next_label += 1
    for lab, (rs, cs) in instance_slices(confident).items():
        block = confident[rs, cs] == lab
        out[rs, cs][block] = next_label
        next_label += 1
    return out


def _channel_entropy_bits(values):
    idx = np.clip((np.clip(values, 0.0, 1.0) * 256.0).astype(np.int64), 0, 255)
    counts = np.bincount(idx, minlength=256).astype(np.float64)
    p = counts[counts > 0] / values.size
    return float(-(p * np.log2(p)).sum())


def glszm_matrix(values, mask, n_levels=16):
    """Gray-level size-zone matrix of a masked 2-D patch.

    Values are quantized to n_levels inside the mask; a zone is an
    8-connected set of equal-level pixels. Returns (P, level_values) with
    P[i, j] = number of zones of level i+1 and size j+1.
    """
    vals = values[mask]
    lo, hi = vals.min(), vals.max()
    if hi - lo < 1e-12:
        quant = np.where(mask, 1, 0)
    else:
        q = np.floor((values - lo) / (hi - lo) * n_levels).astype(np.int64) + 1
        quant = np.where(mask, np.clip(q, 1, n_levels), 0)
    max_size = int(mask.sum())
    p = np.zeros((n_levels, max_size))
    for level in range(1, n_levels + 1):
        zone_mask = quant == level
        if not zone_mask.any():
            continue
        labels, n = backend.label(zone_mask.astype(np.uint8), connectivity=8)
        sizes = np.bincount(labels.ravel(), minlength=n + 1)[1:]
        for size in sizes:
            p[level - 1, size - 1] += 1
    return p


def glszm_features(values, mask, n_levels=16):
    """The 16 standard size-zone statistics."""
    p = glszm_matrix(values, mask, n_levels)
    nz = p.sum()
    np_pixels = int(mask.sum())
    iv = np.arange(1, p.shape[0] + 1, dtype=np.float64)
    jv = np.arange(1, p.shape[1] + 1, dtype=np.float64)
    ps = p.sum(axis=0)
    pg = p.sum(axis=1)
    eps = np.spacing(1.0)
    i2 = iv ** 2
    j2 = jv ** 2
    pnorm = p / nz
    mu_i = float((pg / nz) @ iv)
    mu_j = float((ps / nz) @ jv)
    return np.array([
        float(ps @ (1.0 / j2)) / nz,                     # small area emphasis
        float(ps @ j2) / nz,                             # large area emphasis
        float(pg @ pg) / nz,                             # gray-level non-uniformity
        float(pg @ pg) / nz ** 2,                        # ... normalized
        float(ps @ ps) / nz,                             # size-zone non-uniformity
        float(ps @ ps) / nz ** 2,                        # ... normalized
        nz / np_pixels,                                  # zone percentage
        float((pg / nz) @ ((iv - mu_i) ** 2)),           # gray-level variance
        float((ps / nz) @ ((jv - mu_j) ** 2)),           # zone variance
        float(-(pnorm * np.log2(pnorm + eps)).sum()),    # zone entropy
        float(pg @ (1.0 / i2)) / nz,                     # low gray emphasis
        float(pg @ i2) / nz,                             # high gray emphasis
        float((1.0 / i2) @ p @ (1.0 / j2)) / nz,         # small area low gray
        float(i2 @ p @ (1.0 / j2)) / nz,                 # small area high gray
        float((1.0 / i2) @ p @ j2) / nz,                 # large area low gray
        float(i2 @ p @ j2) / nz,                         # large area high gray
    ])


def instance_features(pixel_values, block_values=None, block_mask=None):
    """34-dim appearance vector for one instance.

    pixel_values: (n, 3) HSI samples of the instance pixels. block_values /
    block_mask: the intensity channel over the instance bounding box and
    the instance mask within it (for the size-zone statistics).
    """
    x = np.asarray(pixel_values, dtype=np.float64)
    stats = []
    for ch in range(3):
        v = x[:, ch]
        mean = float(v.mean())
        std = float(v.std())
        if std < 1e-12:
            skew = 0.0
        else:
            skew = float(((v - mean) ** 3).mean() / std ** 3)
        stats.extend([mean, std, skew, float(v.min()), float(v.max()),
                      _channel_entropy_bits(v)])
    tex = glszm_features(np.asarray(block_values, dtype=np.float64),
                         np.asarray(block_mask, dtype=bool))
    return np.concatenate([np.array(stats), tex])


def _all_instance_features(mask, h_hsi, boxes=None):
    h_hsi = np.asarray(h_hsi, dtype=np.float64)
    boxes = boxes if boxes is not None else instance_slices(mask)
    feats = {}
    for lab, (rs, cs) in boxes.items():
        block = mask[rs, cs] == lab
        vals = h_hsi[rs, cs][block]
        feats[lab] = instance_features(vals, h_hsi[rs, cs, 2], block)
    return feats


class RbfClassifier:
    """Kernel logistic regression with an RBF kernel.

    Deterministic probability-emitting classifier on standardized features;
    gamma and the L2 regularization strength are the two knobs.
    """

    def __init__(self, gamma=0.0, regularization=1.0):
        self.gamma = gamma
        self.regularization = regularization

    def fit(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.mu_ = x.mean(axis=0)
        sd = x.std(axis=0)
        self.sd_ = np.where(sd > 1e-12, sd, 1.0)
        xz = (x - self.mu_) / self.sd_
        self.x_train_ = xz
        gamma = self.gamma
        if gamma <= 0:
            var = float(xz.var())
            gamma = 1.0 / (x.shape[1] * (var if var > 1e-12 else 1.0))
        self.gamma_ = gamma
        k = self._kernel(xz, xz)
        n = x.shape[0]
        lam = 1.0 / (2.0 * self.regularization)

        def objective(params):
            beta, b = params[:n], params[n]
            f = k @ beta + b
            z = y * f - np.logaddexp(0.0, f)
            p = 1.0 / (1.0 + np.exp(-np.clip(f, -35, 35)))
            kb = k @ beta
            loss = -z.sum() + lam * float(beta @ kb)
            grad_f = p - y
            grad_beta = k @ grad_f + 2.0 * lam * kb
            return loss, np.concatenate([grad_beta, [grad_f.sum()]])

        res = minimize(objective, np.zeros(n + 1), jac=True, method="L-BFGS-B",
                       options={"maxiter": 300})
        self.beta_ = res.x[:n]
        self.bias_ = res.x[n]
        return self

    def _kernel(self, a, b):
        d2 = (np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :]
              - 2.0 * a @ b.T)
        return np.exp(-self.gamma_ * np.clip(d2, 0.0, None))

    def predict_proba(self, x):
        xz = (np.asarray(x, dtype=np.float64) - self.mu_) / self.sd_
        f = self._kernel(xz, self.x_train_) @ self.beta_ + self.bias_
        return 1.0 / (1.0 + np.exp(-np.clip(f, -35, 35)))


def _sample_background_disks(mask, areas, rng, max_tries=100):
    """Background-only disk regions matching the given area distribution."""
    h, w = mask.shape
    fg = np.asarray(mask) > 0
    regions = []
    for area in areas:
        radius = max(1, int(round(np.sqrt(area / np.pi))))
        placed = None
        for _ in range(max_tries):
            r = int(rng.integers(radius, h - radius)) if h > 2 * radius else -1
            c = int(rng.integers(radius, w - radius)) if w > 2 * radius else -1
            if r < 0 or c < 0:
                break
            rr, cc = np.ogrid[-radius:radius + 1, -radius:radius + 1]
            disk = rr * rr + cc * cc <= radius * radius
            sub = fg[r - radius:r + radius + 1, c - radius:c + radius + 1]
            if not sub[disk].any():
                placed = (r, c, radius, disk)
                break
        if placed is None:
            return None
        regions.append(placed)
    return regions


def instance_classify_filter(mask, h_hsi, cfg=GlobalConfig(), rng_seed=0):
    """Drop instances that an RBF classifier scores as background.

    Positives are the detected instances; negatives are area-matched
    background disks. With fewer than cfg.min_instances_for_filter
    instances, or when not enough background can be sampled, the mask
    passes through unchanged.
    """
    mask = np.asarray(mask)
    boxes = instance_slices(mask)
    labels = sorted(boxes)
    if len(labels) < cfg.min_instances_for_filter:
        return mask.copy()
    h_hsi = np.asarray(h_hsi, dtype=np.float64)
    feats = _all_instance_features(mask, h_hsi, boxes)
    areas = [int((mask[boxes[lab][0], boxes[lab][1]] == lab).sum())
             for lab in labels]
    rng = np.random.default_rng(rng_seed)
    disks = _sample_background_disks(mask, areas, rng)
    if disks is None:
        warnings.warn("not enough background to sample negatives; "
                      "instance filter skipped")
        return mask.copy()
    neg_feats = []
    for r, c, radius, disk in disks:
        sub_vals = h_hsi[r - radius:r + radius + 1, c - radius:c + radius + 1]
        neg_feats.append(instance_features(sub_vals[disk],
                                           sub_vals[..., 2], disk))
    x = np.stack([feats[lab] for lab in labels] + neg_feats)
    y = np.concatenate([np.ones(len(labels)), np.zeros(len(neg_feats))])
    clf = RbfClassifier(cfg.rbf_gamma, cfg.rbf_regularization).fit(x, y)
    probs = clf.predict_proba(x[:len(labels)])
    out = mask.copy()
    drop = [lab for lab, p in zip(labels, probs)
            if p < cfg.removal_prob_cutoff]
    if drop:
        out[np.isin(out, drop)] = 0
    return out
