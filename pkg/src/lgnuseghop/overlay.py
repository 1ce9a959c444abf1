"""Segmentation overlays for visual review.

With ground truth: true-positive foreground pixels are painted white,
false positives yellow, false negatives blue. Without ground truth, the
predicted instance boundaries are drawn in green.
"""

import numpy as np

WHITE = (1.0, 1.0, 1.0)
YELLOW = (1.0, 1.0, 0.0)
BLUE = (0.0, 0.0, 1.0)
GREEN = (0.0, 1.0, 0.0)


def _boundaries(mask):
    mask = np.asarray(mask)
    padded = np.pad(mask, 1, mode="edge")
    differs = ((padded[:-2, 1:-1] != mask) | (padded[2:, 1:-1] != mask)
               | (padded[1:-1, :-2] != mask) | (padded[1:-1, 2:] != mask))
    return (mask > 0) & differs


def overlay_render(tile, pred, gt=None):
    """RGB overlay of a prediction (and optionally its errors) on a tile."""
    tile = np.asarray(tile, dtype=np.float64)
    pred = np.asarray(pred)
    if tile.shape[:2] != pred.shape:
        raise ValueError(f"tile {tile.shape[:2]} vs mask {pred.shape}")
    out = tile.copy()
    if gt is None:
        out[_boundaries(pred)] = GREEN
        return out
    gt = np.asarray(gt)
    if gt.shape != pred.shape:
        raise ValueError(f"gt {gt.shape} vs pred {pred.shape}")
    p = pred > 0
    g = gt > 0
    out[p & g] = WHITE
    out[p & ~g] = YELLOW
    out[~p & g] = BLUE
    return out
