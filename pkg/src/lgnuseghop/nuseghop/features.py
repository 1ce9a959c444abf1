"""Window featurization for the two-layer Saab pipeline.

All features of a pixel derive from its S x S window (reflect padding at
image borders, and window-local reflect padding for the neighborhood
construction inside each layer). Feature columns follow a fixed global
layout; after feature selection, inference computes only the blocks a
selected column actually needs.

Global column layout (C1 = layer-1 channels incl. DC):
  1. layer-1 spatial: for c in 0..C1-1, the 81 window positions of map c
  2. layer-2 spatial: for c, for q in 0..C2_c-1, the 25 pooled positions
  3. layer-1 spectral: for c, the retained PCA projections of map c
  4. layer-2 spectral: for (c, q), the retained PCA projections
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .saab import apply_pca


def reflect_index(n, pad):
    """Index vector realizing np.pad(..., mode='reflect') along one axis."""
    idx = np.arange(-pad, n + pad)
    period = 2 * n - 2 if n > 1 else 1
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def pad_image(hsi, half):
    return np.pad(np.asarray(hsi, dtype=np.float32),
                  ((half, half), (half, half), (0, 0)), mode="reflect")


def gather_windows(padded, rows, cols, size):
    """(B, size, size, 3) windows centered at (rows, cols) of the original."""
    view = sliding_window_view(padded, (size, size), axis=(0, 1))
    win = view[rows, cols]  # (B, 3, size, size)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1))


def _pad_windows_reflect(windows):
    idx = reflect_index(windows.shape[1], 1)
    return windows[:, idx][:, :, idx]


def layer_cuboids(maps, filt):
    """(B, S, S, C) maps -> (B, S*S, filt*filt*C) window-padded cuboids."""
    padded = _pad_windows_reflect(maps)
    view = sliding_window_view(padded, (filt, filt), axis=(1, 2))
    b, oi, oj, c = view.shape[0], view.shape[1], view.shape[2], view.shape[3]
    cub = view.transpose(0, 1, 2, 4, 5, 3).reshape(b, oi * oj, filt * filt * c)
    return np.ascontiguousarray(cub)


def saab_maps(cuboids, kernel):
    """DC + AC feature maps, DC at channel 0. (B, L, C) output."""
    dc = cuboids.mean(axis=-1)
    if kernel is None or kernel.m_kept == 0:
        return dc[..., None]
    ac = (cuboids - dc[..., None]) @ kernel.w.T.astype(cuboids.dtype)
    return np.concatenate([dc[..., None], ac], axis=-1)


def max_pool(maps, side, pool=2):
    """Per-channel 2x2/2 max pool with ceil sizing ((B, side*side, C) in)."""
    b, _, c = maps.shape
    grid = maps.reshape(b, side, side, c)
    out_side = -(-side // pool)
    padded = np.full((b, out_side * pool, out_side * pool, c), -np.inf,
                     dtype=maps.dtype)
    padded[:, :side, :side] = grid
    pooled = padded.reshape(b, out_side, pool, out_side, pool, c).max(axis=(2, 4))
    return pooled


class FeatureLayout:
    """Column offsets for every block in the global feature order."""

    def __init__(self, layer1, layer2, spectral1, spectral2, l1_positions=81,
                 l2_positions=25):
        self.c1 = layer1.m_kept + 1
        self.l2_channels = [(k.m_kept + 1) if k is not None else 1
                            for k in layer2]
        self.s1_dims = [b.m_kept if b is not None else 0 for b in spectral1]
        self.s2_dims = [[b.m_kept if b is not None else 0 for b in row]
                        for row in spectral2]
        self.l1_positions = l1_positions
        self.l2_positions = l2_positions
        self.blocks = []  # (kind, c, q, offset, dims)
        off = 0
        for c in range(self.c1):
            self.blocks.append(("l1", c, None, off, l1_positions))
            off += l1_positions
        for c in range(self.c1):
            for q in range(self.l2_channels[c]):
                self.blocks.append(("l2", c, q, off, l2_positions))
                off += l2_positions
        for c in range(self.c1):
            self.blocks.append(("s1", c, None, off, self.s1_dims[c]))
            off += self.s1_dims[c]
        for c in range(self.c1):
            for q in range(self.l2_channels[c]):
                self.blocks.append(("s2", c, q, off, self.s2_dims[c][q]))
                off += self.s2_dims[c][q]
        self.total = off


class FeaturePlan:
    """What must be computed to realize a set of selected global columns."""

    def __init__(self, layout, selected):
        selected = np.asarray(sorted(int(i) for i in selected), dtype=np.int64)
        if selected.size and (selected[0] < 0 or selected[-1] >= layout.total):
            raise ValueError("selected feature index out of range")
        self.selected = selected
        self.items = []  # (kind, c, q, within_block_indices, out_columns)
        for kind, c, q, off, dims in layout.blocks:
            lo = np.searchsorted(selected, off)
            hi = np.searchsorted(selected, off + dims)
            if hi > lo:
                self.items.append((kind, c, q, selected[lo:hi] - off,
                                   np.arange(lo, hi)))
        self.l2_maps_needed = {}  # c -> sorted set of q maps to compute
        for kind, c, q, _, _ in self.items:
            if kind in ("l2", "s2"):
                self.l2_maps_needed.setdefault(c, set()).add(q)


class WindowFeaturizer:
    """Applies fitted kernels/bases to batches of windows."""

    def __init__(self, layer1, layer2, spectral1, spectral2, window=9,
                 filt1=3, filt2=3):
        self.layer1 = layer1
        self.layer2 = layer2
        self.spectral1 = spectral1
        self.spectral2 = spectral2
        self.window = window
        self.filt1 = filt1
        self.filt2 = filt2
        self.pooled_side = -(-window // 2)
        self.layout = FeatureLayout(
            layer1, layer2, spectral1, spectral2,
            l1_positions=window * window,
            l2_positions=self.pooled_side ** 2)

    def l1_maps(self, windows):
        return saab_maps(layer_cuboids(windows, self.filt1), self.layer1)

    def pooled(self, f1):
        return max_pool(f1, self.window)

    def l2_map_batch(self, pooled, c, qs=None):
        """Selected layer-2 maps of channel c: (B, 25, len(qs))."""
        cub = layer_cuboids(pooled[..., c:c + 1], self.filt2)
        kernel = self.layer2[c]
        full = saab_maps(cub, kernel)
        if qs is None:
            return full
        return full[..., list(qs)]

    def full_features(self, windows):
        """Every column of the layout; used when fitting the selector."""
        b = windows.shape[0]
        out = np.empty((b, self.layout.total), dtype=np.float32)
        f1 = self.l1_maps(windows)
        pooled = self.pooled(f1)
        f2 = [self.l2_map_batch(pooled, c) for c in range(self.layout.c1)]
        for kind, c, q, off, dims in self.layout.blocks:
            if dims == 0:
                continue
            if kind == "l1":
                out[:, off:off + dims] = f1[:, :, c]
            elif kind == "l2":
                out[:, off:off + dims] = f2[c][:, :, q]
            elif kind == "s1":
                out[:, off:off + dims] = apply_pca(f1[:, :, c], self.spectral1[c])
            else:
                out[:, off:off + dims] = apply_pca(f2[c][:, :, q],
                                                   self.spectral2[c][q])
        return out

    def planned_features(self, windows, plan):
        """Only the plan's selected columns, in selected order."""
        b = windows.shape[0]
        out = np.empty((b, plan.selected.size), dtype=np.float32)
        f1 = self.l1_maps(windows)
        pooled = None
        l2_cache = {}
        if plan.l2_maps_needed:
            pooled = self.pooled(f1)
            for c, qs in plan.l2_maps_needed.items():
                qs = sorted(qs)
                maps = self.l2_map_batch(pooled, c, qs)
                l2_cache[c] = dict(zip(qs, np.moveaxis(maps, 2, 0)))
        for kind, c, q, within, cols in plan.items:
            if kind == "l1":
                out[:, cols] = f1[:, within, c]
            elif kind == "l2":
                out[:, cols] = l2_cache[c][q][:, within]
            elif kind == "s1":
                basis = self.spectral1[c]
                x = f1[:, :, c] - basis.mean.astype(np.float32)
                out[:, cols] = x @ basis.components[within].T.astype(np.float32)
            else:
                basis = self.spectral2[c][q]
                x = l2_cache[c][q] - basis.mean.astype(np.float32)
                out[:, cols] = x @ basis.components[within].T.astype(np.float32)
        return out

    def parameter_count(self):
        """Learned projection parameters (kernel rows, PCA axes and means)."""
        total = self.layer1.w.size
        for k in self.layer2:
            if k is not None:
                total += k.w.size
        for b in self.spectral1:
            if b is not None:
                total += b.components.size + b.mean.size
        for row in self.spectral2:
            for b in row:
                if b is not None:
                    total += b.components.size + b.mean.size
        return int(total)
