"""Gradient-boosted decision trees with logistic loss, built from scratch.

Histogram-based training (32 quantile bins per feature), level-wise growth
to a fixed depth, second-order leaf weights with L2 regularization. Trees
are stored as complete binary arrays so prediction is a tight loop in the
kernel backend.
"""

from dataclasses import dataclass

import numpy as np

from . import backend

N_BINS = 32
REG_LAMBDA = 1.0
MIN_CHILD_HESSIAN = 1e-3


def sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class GradientBoostedTrees:
    """Fitted ensemble; (T, n_nodes) complete-tree arrays, feat<0 = leaf."""

    feat: np.ndarray
    thr: np.ndarray
    value: np.ndarray
    learning_rate: float
    base_margin: float
    depth: int

    def decision_margin(self, x):
        x = np.ascontiguousarray(x, dtype=np.float32)
        return backend.gbt_predict(x, self.feat, self.thr, self.value,
                                   self.learning_rate, self.base_margin)

    def predict_proba(self, x):
        return sigmoid(self.decision_margin(x))

    @property
    def n_trees(self):
        return self.feat.shape[0]


def _quantile_edges(x, n_bins):
    qs = np.arange(1, n_bins) / n_bins
    edges = np.quantile(x.astype(np.float64), qs, axis=0).T
    return np.ascontiguousarray(edges, dtype=np.float32)


def _bin_features(x, edges):
    n, f = x.shape
    binned = np.empty((n, f), dtype=np.uint8)
    for j in range(f):
        binned[:, j] = np.searchsorted(edges[j], x[:, j], side="right")
    return binned


def fit_gbt(x, y, n_trees=100, depth=4, learning_rate=0.075,
            reg_lambda=REG_LAMBDA, n_bins=N_BINS):
    """Train the ensemble on float features and {0,1} labels."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if np.unique(y).size < 2:
        raise ValueError("labels are single-class")
    edges = _quantile_edges(x, n_bins)
    binned = _bin_features(x, edges)
    p0 = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
    base = float(np.log(p0 / (1.0 - p0)))
    n_nodes = 2 ** (depth + 1) - 1
    feat = np.full((n_trees, n_nodes), -1, dtype=np.int32)
    thr = np.zeros((n_trees, n_nodes), dtype=np.float32)
    value = np.zeros((n_trees, n_nodes), dtype=np.float64)
    margins = np.full(n, base)
    for t in range(n_trees):
        p = sigmoid(margins)
        grad = p - y
        hess = p * (1.0 - p)
        node_of = np.zeros(n, dtype=np.int32)  # level-relative ids, -1 done
        delta = np.zeros(n)
        for d in range(depth):
            width = 2 ** d
            g_hist, h_hist = backend.gbt_hist(binned, grad, hess, node_of,
                                              width, n_bins)
            g_tot = g_hist.sum(axis=2)
            h_tot = h_hist.sum(axis=2)
            gl = np.cumsum(g_hist, axis=2)[:, :, :-1]
            hl = np.cumsum(h_hist, axis=2)[:, :, :-1]
            gr = g_tot[:, :, None] - gl
            hr = h_tot[:, :, None] - hl
            gain = (gl ** 2 / (hl + reg_lambda) + gr ** 2 / (hr + reg_lambda)
                    - (g_tot ** 2 / (h_tot + reg_lambda))[:, :, None])
            gain[(hl < MIN_CHILD_HESSIAN) | (hr < MIN_CHILD_HESSIAN)] = -np.inf
            new_node_of = np.full(n, -1, dtype=np.int32)
            for rel in range(width):
                gid = width - 1 + rel
                members = node_of == rel
                if not members.any():
                    continue
                flat = int(np.argmax(gain[rel]))
                best_f, best_b = divmod(flat, n_bins - 1)
                if not np.isfinite(gain[rel, best_f, best_b]) \
                        or gain[rel, best_f, best_b] <= 1e-12:
                    value[t, gid] = _leaf_weight(
                        g_tot[rel, 0], h_tot[rel, 0], reg_lambda)
                    delta[members] = value[t, gid]
                    continue
                feat[t, gid] = best_f
                thr[t, gid] = edges[best_f, best_b]
                go_right = binned[members, best_f] > best_b
                child = 2 * rel + go_right
                new_node_of[members] = child
            node_of = new_node_of
        # nodes at the final level are leaves
        live = node_of >= 0
        if live.any():
            width = 2 ** depth
            g_leaf = np.bincount(node_of[live], weights=grad[live],
                                 minlength=width)
            h_leaf = np.bincount(node_of[live], weights=hess[live],
                                 minlength=width)
            for rel in range(width):
                members = live & (node_of == rel)
                if not members.any():
                    continue
                gid = width - 1 + rel
                value[t, gid] = _leaf_weight(g_leaf[rel], h_leaf[rel],
                                             reg_lambda)
                delta[members] = value[t, gid]
        margins = margins + learning_rate * delta
    return GradientBoostedTrees(feat=feat, thr=thr, value=value,
                                learning_rate=learning_rate, base_margin=base,
                                depth=depth)


def _leaf_weight(g, h, reg_lambda):
    return float(-g / (h + reg_lambda))
