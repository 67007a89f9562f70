"""Histogram binning and leaf-wise growth of second-order regression trees."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from numba import njit

MAX_BINS = 255


@njit(cache=True, nogil=True)
def _hist_kernel(Xb, rows, g, h, n_bins):
    p = Xb.shape[0]
    out = np.zeros((3, p, n_bins))
    for j in range(p):
        col = Xb[j]
        for r in rows:
            b = col[r]
            out[0, j, b] += g[r]
            out[1, j, b] += h[r]
            out[2, j, b] += 1.0
    return out


class Binner:
    """Per-feature bin thresholds from training quantiles.

    A value ``x`` falls in bin ``b`` when ``thresholds[b-1] < x <= thresholds[b]``,
    so a split "bin <= b" is the same test as "x <= thresholds[b]" on raw data.
    """

    def __init__(self, max_bins: int = MAX_BINS, sample_rows: int = 200_000, seed: int = 0):
        if not 2 <= max_bins <= 256:
            raise ValueError("max_bins must be in [2, 256]")
        self.max_bins = max_bins
        self.sample_rows = sample_rows
        self.seed = seed
        self.thresholds: list[np.ndarray] = []

    def fit(self, X: np.ndarray) -> "Binner":
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] > self.sample_rows:
            rng = np.random.default_rng(self.seed)
            X = X[np.sort(rng.choice(X.shape[0], self.sample_rows, replace=False))]
        self.thresholds = []
        for j in range(X.shape[1]):
            uniq = np.unique(X[:, j])
            if uniq.size <= self.max_bins:
                th = (uniq[:-1] + uniq[1:]) / 2
            else:
                qs = np.quantile(X[:, j], np.linspace(0, 1, self.max_bins + 1)[1:-1])
                th = np.unique(qs)
            self.thresholds.append(th)
        return self

    @property
    def n_bins(self) -> int:
        return max((t.size for t in self.thresholds), default=0) + 1

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Binned features as a ``(p, n)`` uint8 array (feature-major)."""
        X = np.asarray(X, dtype=np.float64)
        out = np.empty((X.shape[1], X.shape[0]), dtype=np.uint8)
        for j, th in enumerate(self.thresholds):
            out[j] = np.searchsorted(th, X[:, j], side="left")
        return out

    def threshold_value(self, feature: int, bin_index: int) -> float:
        return float(self.thresholds[feature][bin_index])


@dataclass
class Tree:
    """Array-encoded binary tree; ``feature[k] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    threshold_bin: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf node index for each row of raw features ``X``."""
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                return node
            r = rows[internal]
            n = node[internal]
            go_left = X[r, feat[internal]] <= self.threshold[n]
            node[internal] = np.where(go_left, self.left[n], self.right[n])

    def apply_binned(self, Xb: np.ndarray) -> np.ndarray:
        """Leaf node index for each column of feature-major binned data."""
        n_rows = Xb.shape[1]
        node = np.zeros(n_rows, dtype=np.int64)
        rows = np.arange(n_rows)
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                return node
            r = rows[internal]
            n = node[internal]
            go_left = Xb[feat[internal], r] <= self.threshold_bin[n]
            node[internal] = np.where(go_left, self.left[n], self.right[n])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


@dataclass
class TreeParams:
    num_leaves: int = 31
    max_depth: int = -1
    min_data_in_leaf: int = 20
    min_sum_hessian: float = 1e-3
    lambda_l2: float = 0.0
    min_split_gain: float = 0.0


class _Node:
    __slots__ = ("rows", "g", "h", "hist", "depth", "split", "id")

    def __init__(self, rows, g, h, hist, depth):
        self.rows = rows
        self.g = g
        self.h = h
        self.hist = hist
        self.depth = depth
        self.split = None
        self.id = -1


class TreeGrower:
    """Grows one tree on feature-major binned data with per-row gradients and Hessians.

    Nodes are expanded best-gain first until ``num_leaves`` is reached.  The
    histogram of the larger child is obtained by subtracting the smaller
    child's histogram from the parent's.
    """

    def __init__(self, Xb: np.ndarray, n_bins: int, params: TreeParams):
        self.Xb = Xb
        self.n_bins = n_bins
        self.params = params
        self.p = Xb.shape[0]

    def _histogram(self, rows, g, h):
        return _hist_kernel(self.Xb, rows, g, h, self.n_bins)

    def _best_split(self, node, feature_mask):
        prm = self.params
        lam = prm.lambda_l2
        hist = node.hist
        G, H, C = node.g, node.h, float(node.rows.size)
        cs = np.cumsum(hist, axis=2)[:, :, :-1]
        gl, hl, cl = cs[0], cs[1], cs[2]
        gr, hr, cr = G - gl, H - hl, C - cl
        valid = (
            (cl >= prm.min_data_in_leaf)
            & (cr >= prm.min_data_in_leaf)
            & (hl >= prm.min_sum_hessian)
            & (hr >= prm.min_sum_hessian)
        )
        if feature_mask is not None:
            valid &= feature_mask[:, None]
        if not valid.any():
            return None
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = gl**2 / (hl + lam) + gr**2 / (hr + lam) - G**2 / (H + lam)
        gain = np.where(valid, gain, -np.inf)
        k = int(np.argmax(gain))
        best = gain.flat[k]
        if not np.isfinite(best) or best <= prm.min_split_gain:
            return None
        feat, b = divmod(k, gain.shape[1])
        return float(best), feat, b

    def grow(self, rows, g, h, feature_mask=None):
        """Return ``(tree_arrays, leaves)`` where ``leaves`` maps node id to its rows."""
        prm = self.params
        root = _Node(rows, float(g[rows].sum()), float(h[rows].sum()), self._histogram(rows, g, h), 0)
        nodes = [root]
        root.id = 0
        children = {}
        heap = []
        counter = 0

        def push(node):
            nonlocal counter
            if prm.max_depth > 0 and node.depth >= prm.max_depth:
                return
            node.split = self._best_split(node, feature_mask)
            if node.split is not None:
                heapq.heappush(heap, (-node.split[0], counter, node))
                counter += 1

        push(root)
        n_leaves = 1
        while heap and n_leaves < prm.num_leaves:
            _, _, node = heapq.heappop(heap)
            _, feat, b = node.split
            go_left = self.Xb[feat, node.rows] <= b
            lrows, rrows = node.rows[go_left], node.rows[~go_left]
            small, large = (lrows, rrows) if lrows.size <= rrows.size else (rrows, lrows)
            hs = self._histogram(small, g, h)
            rest = node.hist - hs
            # child sums are read off the parent histogram so both sides stay exact partitions
            cs = node.hist[:, feat, : b + 1].sum(axis=1)
            gl, hl = float(cs[0]), float(cs[1])
            left = _Node(lrows, gl, hl, None, node.depth + 1)
            right = _Node(rrows, node.g - gl, node.h - hl, None, node.depth + 1)
            if small is lrows:
                left.hist, right.hist = hs, rest
            else:
                right.hist, left.hist = hs, rest
            node.hist = None
            for child in (left, right):
                child.id = len(nodes)
                nodes.append(child)
            children[node.id] = (left.id, right.id, feat, b)
            n_leaves += 1
            push(left)
            push(right)

        m = len(nodes)
        feature = np.full(m, -1, dtype=np.int64)
        tbin = np.zeros(m, dtype=np.int64)
        left_arr = np.full(m, -1, dtype=np.int64)
        right_arr = np.full(m, -1, dtype=np.int64)
        for nid, (l, r, feat, b) in children.items():
            feature[nid], tbin[nid], left_arr[nid], right_arr[nid] = feat, b, l, r
        leaves = {n.id: n for n in nodes if n.id not in children}
        return (feature, tbin, left_arr, right_arr), leaves
