"""Raster containers and the shared pixel-level primitives.

Raster conventions used across the package:

* RGB tile   -- float array (H, W, 3), values in [0, 1]
* gray map   -- float array (H, W)
* heatmap    -- float array (H, W), values in [0, 1]
* instance mask -- int32 array (H, W); 0 is background, positive labels are
  8-connected instances (labels need not be consecutive)

Everything here is a pure function; no raster is mutated in place.
"""

from dataclasses import dataclass

import numpy as np

from . import backend


class CoreError(ValueError):
    pass


def validate_rgb_tile(tile):
    tile = np.asarray(tile, dtype=np.float64)
    if tile.ndim != 3 or tile.shape[2] != 3:
        raise CoreError(f"expected (H, W, 3) tile, got {tile.shape}")
    if tile.shape[0] < 1 or tile.shape[1] < 1:
        raise CoreError("empty tile")
    if tile.min() < 0.0 or tile.max() > 1.0:
        raise CoreError("tile values outside [0, 1]")
    return tile


def rgb_to_hsi(tile):
    """RGB -> HSI (arccos hue formulation), every channel in [0, 1].

    I = (R+G+B)/3; S = 1 - min/I (0 when I == 0); H is the arccos hue
    wrapped to [0, 1], 0 for achromatic pixels.
    """
    tile = np.asarray(tile, dtype=np.float64)
    r, g, b = tile[..., 0], tile[..., 1], tile[..., 2]
    i = (r + g + b) / 3.0
    mn = np.minimum(np.minimum(r, g), b)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(i > 0, 1.0 - mn / np.where(i > 0, i, 1.0), 0.0)
    num = 0.5 * ((r - g) + (r - b))
    den = np.sqrt((r - g) ** 2 + (r - b) * (g - b))
    achromatic = den < 1e-12
    cosang = np.clip(num / np.where(achromatic, 1.0, den), -1.0, 1.0)
    theta = np.arccos(cosang) / (2.0 * np.pi)
    h = np.where(b > g, 1.0 - theta, theta)
    h = np.where(achromatic, 0.0, h)
    s = np.clip(s, 0.0, 1.0)
    return np.stack([h, s, i], axis=-1)


def connected_components(binary, connectivity=8):
    """Label the foreground of a {0,1} map into 8-connected instances."""
    binary = np.asarray(binary)
    labels, _ = backend.label(binary, connectivity=connectivity)
    return labels


@dataclass(frozen=True)
class Histogram256:
    """256 equal-width bin counts over normalized intensity [0, 1]."""

    bins: np.ndarray  # int64[256]
    total: int


def build_histogram(patch):
    patch = np.asarray(patch, dtype=np.float64)
    if patch.size == 0:
        raise CoreError("empty patch")
    idx = np.clip((np.clip(patch, 0.0, 1.0) * 256.0).astype(np.int64), 0, 255)
    bins = np.bincount(idx.ravel(), minlength=256)
    return Histogram256(bins=bins, total=int(patch.size))


def convex_hull(points):
    """Convex hull of 2-D points (Andrew monotone chain), CCW order."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) <= 2:
        return pts

    def half(iterable):
        out = []
        for p in iterable:
            while len(out) >= 2:
                o, a = out[-2], out[-1]
                if (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0]) <= 0:
                    out.pop()
                else:
                    break
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def polygon_area(poly):
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def pixel_hull(rows, cols):
    """Hull polygon of a pixel set, pixels taken as unit squares."""
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    corners = np.concatenate([
        np.stack([rows - 0.5, cols - 0.5], axis=1),
        np.stack([rows - 0.5, cols + 0.5], axis=1),
        np.stack([rows + 0.5, cols - 0.5], axis=1),
        np.stack([rows + 0.5, cols + 0.5], axis=1),
    ])
    return convex_hull(corners)


def pixel_hull_area(rows, cols):
    hull = pixel_hull(rows, cols)
    if len(hull) < 3:
        # collinear corner degenerate cannot happen for >= 1 full square
        return float(len(rows))
    return polygon_area(hull)


@dataclass(frozen=True)
class RegionProps:
    label: int
    area: int
    centroid: tuple  # (row, col)
    bbox: tuple  # (top, left, bottom, right), bottom/right exclusive
    solidity: float


def region_props(mask):
    """Per-instance geometry; solidity is area / exact hull polygon area."""
    mask = np.asarray(mask)
    labels = np.unique(mask)
    labels = labels[labels > 0]
    props = []
    for lab in labels:
        rows, cols = np.nonzero(mask == lab)
        area = rows.size
        hull_area = pixel_hull_area(rows, cols)
        props.append(RegionProps(
            label=int(lab),
            area=int(area),
            centroid=(float(rows.mean()), float(cols.mean())),
            bbox=(int(rows.min()), int(cols.min()),
                  int(rows.max()) + 1, int(cols.max()) + 1),
            solidity=float(area / hull_area),
        ))
    return props


def instance_slices(mask):
    """Bounding-box slices per positive label, one pass over the raster.

    Returns {label: (row_slice, col_slice)}; much cheaper than calling
    nonzero per label on large rasters.
    """
    mask = np.asarray(mask)
    rr, cc = np.nonzero(mask > 0)
    if rr.size == 0:
        return {}
    labs = mask[rr, cc].astype(np.int64)
    hi = int(labs.max())
    big = np.iinfo(np.int64).max
    r0 = np.full(hi + 1, big)
    r1 = np.full(hi + 1, -1)
    c0 = np.full(hi + 1, big)
    c1 = np.full(hi + 1, -1)
    np.minimum.at(r0, labs, rr)
    np.maximum.at(r1, labs, rr)
    np.minimum.at(c0, labs, cc)
    np.maximum.at(c1, labs, cc)
    present = np.nonzero(r1 >= 0)[0]
    return {int(lab): (slice(int(r0[lab]), int(r1[lab]) + 1),
                       slice(int(c0[lab]), int(c1[lab]) + 1))
            for lab in present}
