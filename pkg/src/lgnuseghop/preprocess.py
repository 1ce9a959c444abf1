"""Stain separation, contrast enhancement and the p-value projection.

The p-value map is the single-channel image the local thresholding stage
operates on: dark nuclei map to low values, background to high values, each
patch independently rescaled to [0, 1].
"""

from dataclasses import dataclass

import numpy as np

from .core import build_histogram

# Reference eosin direction in OD space, used only when a tile carries a
# single measurable stain and the data cannot define a second axis.
_EOSIN_FALLBACK = np.array([0.092789, 0.954111, 0.283111])


class ConstantTile(ValueError):
    pass


class DegeneratePatch(ValueError):
    pass


@dataclass(frozen=True)
class StainBasis:
    hematoxylin_dir: np.ndarray  # unit 3-vector, OD space
    eosin_dir: np.ndarray
    od_floor: float = 1.0 / 256.0


@dataclass(frozen=True)
class PqrBasis:
    mean_color: np.ndarray
    p: np.ndarray
    q: np.ndarray
    r: np.ndarray
    sign_flag: int
    singular_values: np.ndarray


def rgb_to_od(tile):
    """Optical density per channel: OD = -log((v*255 + 1) / 256)."""
    return -np.log((np.asarray(tile, dtype=np.float64) * 255.0 + 1.0) / 256.0)


def od_to_rgb(od):
    return np.clip((256.0 * np.exp(-od) - 1.0) / 255.0, 0.0, 1.0)


def _unit(v):
    return v / np.linalg.norm(v)


def _angle_direction(phi, v1, v2):
    d = np.cos(phi) * v1 + np.sin(phi) * v2
    if d.sum() < 0:
        d = -d
    d = np.clip(d, 0.0, None)
    n = np.linalg.norm(d)
    if n < 1e-12:
        raise ConstantTile("degenerate stain direction")
    return d / n


def fit_stain_basis(tile, low_pct=1.0, high_pct=99.0):
    """SVD of mean-centered OD pixels; stains at the percentile-extreme
    angles of the projections onto the resulting 2-D plane."""
    od = rgb_to_od(tile).reshape(-1, 3)
    centered = od - od.mean(axis=0)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    if svals[0] < 1e-6 and svals[1] < 1e-6:
        raise ConstantTile("no stain variance")
    v1, v2 = vt[0], vt[1]
    proj = od @ np.stack([v1, v2], axis=1)
    # orient the plane so the bulk of the data sits at positive x
    if proj[:, 0].mean() < 0:
        v1, proj = -v1, proj * np.array([-1.0, 1.0])
    phi = np.arctan2(proj[:, 1], proj[:, 0])
    lo, hi = np.percentile(phi, [low_pct, high_pct])
    d_lo = _angle_direction(lo, v1, v2)
    d_hi = _angle_direction(hi, v1, v2)
    # hematoxylin (blue stain) absorbs red light: larger red-channel OD
    if abs(float(d_lo @ d_hi)) >= 0.999:
        # single stain: keep the data axis, back-fill the other one
        h = d_lo if d_lo[0] >= d_hi[0] else d_hi
        e = _EOSIN_FALLBACK - (_EOSIN_FALLBACK @ h) * h
        e = np.clip(e, 0.0, None)
        if np.linalg.norm(e) < 1e-6:
            e = np.roll(h, 1)
        e = _unit(e)
    elif d_lo[0] >= d_hi[0]:
        h, e = d_lo, d_hi
    else:
        h, e = d_hi, d_lo
    return StainBasis(hematoxylin_dir=h, eosin_dir=e)


def stain_concentrations(tile, basis):
    """Least-squares stain concentrations per pixel, clipped at 0."""
    od = rgb_to_od(tile).reshape(-1, 3)
    m = np.stack([basis.hematoxylin_dir, basis.eosin_dir], axis=1)
    conc, *_ = np.linalg.lstsq(m, od.T, rcond=None)
    return np.clip(conc.T, 0.0, None)


def stain_separate(tile):
    """Split H&E stains; returns (hematoxylin-only RGB image, basis).

    Raises ConstantTile when the tile has no usable stain variance; the
    caller is expected to fall back to the raw tile.
    """
    tile = np.asarray(tile, dtype=np.float64)
    basis = fit_stain_basis(tile)
    conc = stain_concentrations(tile, basis)
    od_h = np.outer(conc[:, 0], basis.hematoxylin_dir)
    h_img = od_to_rgb(od_h).reshape(tile.shape)
    return h_img, basis


def hist_equalize(image):
    """Per-channel 256-level CDF remap; output stays in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    out = np.empty_like(image)
    chans = image.reshape(image.shape[0], image.shape[1], -1)
    outc = out.reshape(chans.shape)
    for c in range(chans.shape[2]):
        hist = build_histogram(chans[..., c])
        cdf = np.cumsum(hist.bins) / hist.total
        idx = np.clip((np.clip(chans[..., c], 0.0, 1.0) * 256.0).astype(np.int64),
                      0, 255)
        outc[..., c] = cdf[idx]
    return out


def fit_pqr(patch):
    """PCA basis of the patch's pixel colors.

    P is the first right-singular vector, sign-flagged so that projections
    correlate positively with intensity (nuclei land at low p-values).
    """
    patch = np.asarray(patch, dtype=np.float64)
    pixels = patch.reshape(-1, 3)
    if pixels.shape[0] < 4:
        raise DegeneratePatch("patch needs at least 4 pixels")
    mean = pixels.mean(axis=0)
    centered = pixels - mean
    if float((centered ** 2).sum()) < 1e-12:
        raise DegeneratePatch("zero-variance patch")
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    intensity = pixels.mean(axis=1)
    proj = centered @ vt[0]
    corr = float(proj @ (intensity - intensity.mean()))
    sign = 1 if corr >= 0 else -1
    return PqrBasis(mean_color=mean, p=vt[0], q=vt[1], r=vt[2],
                    sign_flag=sign, singular_values=svals)


def pqr_project(patch, basis):
    """Project onto P and min-max rescale to [0, 1] within the patch."""
    patch = np.asarray(patch, dtype=np.float64)
    proj = basis.sign_flag * ((patch - basis.mean_color) @ basis.p)
    lo, hi = proj.min(), proj.max()
    if hi - lo < 1e-12:
        return np.full(proj.shape, 0.5)
    return (proj - lo) / (hi - lo)


def patch_grid(size, patch):
    """1-D patch boundaries; the last patch absorbs any remainder."""
    if size <= patch:
        return [(0, size)]
    edges = list(range(0, size - patch + 1, patch))
    spans = [(e, e + patch) for e in edges]
    spans[-1] = (spans[-1][0], size)
    return spans


def pvalue_map(image, patch=50):
    """Per-patch PQR projection assembled into a full-size gray map.

    Degenerate patches fall back to their min-max rescaled intensity
    channel (constant patches emit 0.5).
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    out = np.empty((h, w))
    for r0, r1 in patch_grid(h, patch):
        for c0, c1 in patch_grid(w, patch):
            sub = image[r0:r1, c0:c1]
            try:
                basis = fit_pqr(sub)
                out[r0:r1, c0:c1] = pqr_project(sub, basis)
            except DegeneratePatch:
                out[r0:r1, c0:c1] = _rescaled_intensity(sub)
    return out


def intensity_map(image, patch=50):
    """Fixed-colorspace stand-in for the PQR map (ablation path)."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    out = np.empty((h, w))
    for r0, r1 in patch_grid(h, patch):
        for c0, c1 in patch_grid(w, patch):
            out[r0:r1, c0:c1] = _rescaled_intensity(image[r0:r1, c0:c1])
    return out


def _rescaled_intensity(sub):
    inten = sub.mean(axis=2)
    lo, hi = inten.min(), inten.max()
    if hi - lo < 1e-12:
        return np.full(inten.shape, 0.5)
    return (inten - lo) / (hi - lo)
