"""Saab transforms and the plain PCA used for the spectral stage.

A Saab stage splits each input vector (a flattened cuboid) into its mean
(DC) and the projection of the residual onto energy-ranked orthonormal
directions (AC). Directions are estimated from training cuboids and
truncated by an energy-share threshold with a hard cap.
"""

from dataclasses import dataclass

import numpy as np


class EmptyKernel(ValueError):
    pass


@dataclass(frozen=True)
class SaabKernel:
    w: np.ndarray          # (m_kept, k) orthonormal rows
    energies: np.ndarray   # (m_kept,) energy shares, non-increasing
    input_dims: tuple      # (f, f, channels) with f*f*channels == k
    dc_included: bool = True

    @property
    def m_kept(self):
        return self.w.shape[0]

    @property
    def n_features(self):
        return self.m_kept + (1 if self.dc_included else 0)


@dataclass(frozen=True)
class PcaBasis:
    mean: np.ndarray        # (d,)
    components: np.ndarray  # (m_kept, d)
    energies: np.ndarray    # (m_kept,) shares of total variance

    @property
    def m_kept(self):
        return self.components.shape[0]


def _canonical_signs(vectors):
    """Flip each row so its largest-magnitude entry is positive."""
    idx = np.abs(vectors).argmax(axis=1)
    signs = np.sign(vectors[np.arange(vectors.shape[0]), idx])
    signs[signs == 0] = 1.0
    return vectors * signs[:, None]


def _retain(eigvals, t_e, max_dims):
    total = float(eigvals.sum())
    if total <= 1e-20:
        return np.array([], dtype=np.int64), np.array([])
    shares = eigvals / total
    keep = np.nonzero(shares >= t_e)[0]
    keep = keep[:max_dims]
    return keep, shares[keep]


def _from_scatter(scatter, t_e, max_dims):
    eigvals, eigvecs = np.linalg.eigh(scatter)
    eigvals = np.clip(eigvals[::-1], 0.0, None)
    eigvecs = eigvecs[:, ::-1].T
    keep, shares = _retain(eigvals, t_e, max_dims)
    return _canonical_signs(eigvecs[keep]), shares


def fit_saab(samples, t_e=1e-3, max_dims=10, input_dims=None):
    """Fit one Saab stage from training cuboids.

    samples: (..., K) array, flattened to rows. Each row's mean (its DC) is
    removed before the PCA; retained directions must carry an energy share
    of at least t_e, up to max_dims of them. Raises EmptyKernel when no AC
    energy survives.
    """
    x = np.asarray(samples, dtype=np.float64)
    k = x.shape[-1]
    rows = x.reshape(-1, k)
    if rows.shape[0] < k:
        raise ValueError(f"need at least K={k} cuboids, got {rows.shape[0]}")
    if not np.isfinite(rows).all():
        raise ValueError("non-finite samples")
    centered = rows - rows.mean(axis=1, keepdims=True)
    if rows.size <= 2_000_000:
        _, svals, vt = np.linalg.svd(centered, full_matrices=False)
        keep, shares = _retain(svals ** 2, t_e, max_dims)
        w = _canonical_signs(vt[keep])
    else:
        w, shares = _from_scatter(centered.T @ centered, t_e, max_dims)
    if w.shape[0] == 0:
        raise EmptyKernel("no component carries the required energy")
    dims = tuple(input_dims) if input_dims is not None else (k,)
    return SaabKernel(w=w, energies=shares, input_dims=dims)


def saab_from_scatter(scatter, t_e=1e-3, max_dims=10, input_dims=None):
    """Saab stage from an accumulated scatter matrix of DC-removed cuboids."""
    w, shares = _from_scatter(np.asarray(scatter, dtype=np.float64), t_e, max_dims)
    if w.shape[0] == 0:
        raise EmptyKernel("no component carries the required energy")
    k = scatter.shape[0]
    dims = tuple(input_dims) if input_dims is not None else (k,)
    return SaabKernel(w=w, energies=shares, input_dims=dims)


def apply_saab(cuboids, kernel):
    """Featurize cuboids: DC (the exact mean) first, then AC projections."""
    x = np.asarray(cuboids)
    k = x.shape[-1]
    if k != kernel.w.shape[1]:
        raise ValueError(f"cuboid dim {k} != kernel dim {kernel.w.shape[1]}")
    dc = x.mean(axis=-1)
    ac = (x - dc[..., None]) @ kernel.w.T.astype(x.dtype)
    return np.concatenate([dc[..., None], ac], axis=-1)


def fit_pca(samples, t_e=1e-3, max_dims=10):
    """Column-centered PCA truncated by variance share."""
    x = np.asarray(samples, dtype=np.float64)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / max(x.shape[0], 1)
    comps, shares = _from_scatter(cov, t_e, max_dims)
    return PcaBasis(mean=mean, components=comps, energies=shares)


def pca_from_moments(s1, s2, n, t_e=1e-3, max_dims=10):
    """PCA from streamed first/second moments (sum, sum of outer products)."""
    mean = s1 / n
    cov = s2 / n - np.outer(mean, mean)
    cov = 0.5 * (cov + cov.T)
    comps, shares = _from_scatter(cov, t_e, max_dims)
    return PcaBasis(mean=mean, components=comps, energies=shares)


def apply_pca(x, basis):
    x = np.asarray(x)
    return (x - basis.mean.astype(x.dtype)) @ basis.components.T.astype(x.dtype)
