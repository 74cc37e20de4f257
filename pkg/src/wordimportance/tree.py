"""CART regression tree with variance-reduction splits and impurity-based feature importance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Node:
    value: float
    n: int
    feature: int | None = None
    threshold: float | None = None
    gain: float = 0.0
    left: "Node | None" = None
    right: "Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Best (gain, feature, threshold) by reduction in summed squared error.

    Features are scanned in index order and thresholds in increasing order; a
    candidate replaces the incumbent only on strictly larger gain.
    """
    n = len(y)
    parent_sse = float(((y - y.mean()) ** 2).sum())
    best = (0.0, None, None)
    tol = 1e-12 * max(parent_sse, 1.0)
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs, ys = X[order, j], y[order]
        csum, csq = np.cumsum(ys), np.cumsum(ys ** 2)
        i = np.arange(min_leaf, n - min_leaf + 1)
        i = i[xs[i - 1] != xs[np.minimum(i, n - 1)]]
        if len(i) == 0:
            continue
        nl, nr = i, n - i
        sl, sql = csum[i - 1], csq[i - 1]
        sse_l = sql - sl * sl / nl
        sse_r = (csq[-1] - sql) - (csum[-1] - sl) ** 2 / nr
        gains = parent_sse - sse_l - sse_r
        at = int(np.argmax(gains))
        if gains[at] > best[0] + tol:
            best = (float(gains[at]), j, 0.5 * (xs[i[at] - 1] + xs[i[at]]))
    return best


@dataclass
class RegressionTree:
    max_depth: int = 6
    min_leaf: int = 20
    root: Node | None = None
    n_features: int = 0
    variance_reduction: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def fit(self, X, y) -> "RegressionTree":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or len(X) != len(y):
            raise ValueError("X must be (n_samples, n_features) matching y")
        self.n_features = X.shape[1]
        self.variance_reduction = np.zeros(self.n_features)
        self._n = len(y)
        self.root = self._grow(X, y, 0)
        return self

    def _grow(self, X, y, depth) -> Node:
        node = Node(float(y.mean()), len(y))
        if depth >= self.max_depth or len(y) < 2 * self.min_leaf or np.all(y == y[0]):
            return node
        gain, j, thr = _best_split(X, y, self.min_leaf)
        if j is None:
            return node
        node.feature, node.threshold, node.gain = j, thr, gain
        # per-sample weighted so importances match the usual N_t/N convention
        self.variance_reduction[j] += gain / self._n
        go_left = X[:, j] <= thr
        node.left = self._grow(X[go_left], y[go_left], depth + 1)
        node.right = self._grow(X[~go_left], y[~go_left], depth + 1)
        return node

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(len(X))
        for i, row in enumerate(X):
            node = self.root
            while not node.is_leaf:
                node = node.left if row[node.feature] <= node.threshold else node.right
            out[i] = node.value
        return out

    @property
    def feature_importances(self) -> np.ndarray:
        """Share of total variance reduction per feature; all zeros when nothing was split."""
        total = self.variance_reduction.sum()
        if total <= 0:
            return np.zeros(self.n_features)
        return self.variance_reduction / total
