"""Array-based CART regression trees (numba kernels).

A tree is five parallel arrays indexed by node id; node 0 is the root and
``feature[k] == -1`` marks a leaf.  Samples with ``x[feature] <= threshold``
go left.  Split search maximizes squared-error reduction; exact ties go to
the lowest feature index, then the lowest threshold.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _best_split(X, y, idx, start, end, feats, min_leaf):
    n = end - start
    total = 0.0
    for k in range(start, end):
        total += y[idx[k]]
    parent = total * total / n
    best_gain = 1e-12 * max(1.0, abs(parent))
    best_feat = -1
    best_thr = 0.0
    xs = np.empty(n)
    ys = np.empty(n)
    for f in feats:
        for k in range(n):
            xs[k] = X[idx[start + k], f]
        order = np.argsort(xs, kind="mergesort")
        for k in range(n):
            ys[k] = y[idx[start + order[k]]]
        left = 0.0
        for k in range(n - 1):
            left += ys[k]
            nl = k + 1
            if nl < min_leaf:
                continue
            if n - nl < min_leaf:
                break
            a = xs[order[k]]
            b = xs[order[k + 1]]
            if b <= a:
                continue
            right = total - left
            gain = left * left / nl + right * right / (n - nl) - parent
            if gain > best_gain:
                best_gain = gain
                best_feat = f
                best_thr = 0.5 * (a + b)
    return best_feat, best_thr


@njit(cache=True, nogil=True)
def build_structure(X, y, idx, max_depth, min_leaf, mtry, feat_keys):
    """Grow a tree on rows ``idx`` (repeats allowed) by variance reduction on ``y``.

    ``feat_keys[node]`` holds random keys; the ``mtry`` smallest pick the
    candidate features at that node.
    """
    idx = idx.copy()
    n, m = idx.shape[0], X.shape[1]
    cap = feat_keys.shape[0]
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    parent = np.full(cap, -1, np.int64)
    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    n_nodes = 1
    top = 0
    st_node[0], st_start[0], st_end[0], st_depth[0] = 0, 0, n, 0
    top = 1
    while top > 0:
        top -= 1
        node, start, end, depth = st_node[top], st_start[top], st_end[top], st_depth[top]
        if depth >= max_depth or end - start < 2 * min_leaf or n_nodes + 2 > cap:
            continue
        if mtry >= m:
            feats = np.arange(m)
        else:
            feats = np.sort(np.argsort(feat_keys[node, :m], kind="mergesort")[:mtry])
        f, thr = _best_split(X, y, idx, start, end, feats, min_leaf)
        if f < 0:
            continue
        # partition idx[start:end] stably
        buf = np.empty(end - start, np.int64)
        nl = 0
        for k in range(start, end):
            if X[idx[k], f] <= thr:
                buf[nl] = idx[k]
                nl += 1
        nr = nl
        for k in range(start, end):
            if X[idx[k], f] > thr:
                buf[nr] = idx[k]
                nr += 1
        idx[start:end] = buf
        lc, rc = n_nodes, n_nodes + 1
        n_nodes += 2
        feature[node], threshold[node] = f, thr
        left[node], right[node] = lc, rc
        parent[lc], parent[rc] = node, node
        # push right first so the left subtree is numbered first
        st_node[top], st_start[top], st_end[top], st_depth[top] = rc, start + nl, end, depth + 1
        top += 1
        st_node[top], st_start[top], st_end[top], st_depth[top] = lc, start, start + nl, depth + 1
        top += 1
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), parent[:n_nodes].copy())


@njit(cache=True, nogil=True)
def apply_tree(feature, threshold, left, right, X):
    """Leaf id reached by every row of X."""
    out = np.empty(X.shape[0], np.int64)
    for i in range(X.shape[0]):
        k = 0
        while feature[k] >= 0:
            if X[i, feature[k]] <= threshold[k]:
                k = left[k]
            else:
                k = right[k]
        out[i] = k
    return out


@njit(cache=True, nogil=True)
def node_sums(feature, threshold, left, right, X, idx, values, weights):
    """Per-node sums of ``values`` and ``weights`` over rows ``idx``, every node on each path."""
    nn = feature.shape[0]
    s = np.zeros(nn)
    w = np.zeros(nn)
    for r in range(idx.shape[0]):
        i = idx[r]
        k = 0
        while True:
            s[k] += values[i]
            w[k] += weights[i]
            if feature[k] < 0:
                break
            if X[i, feature[k]] <= threshold[k]:
                k = left[k]
            else:
                k = right[k]
    return s, w


@njit(cache=True, nogil=True)
def predict_forest(features, thresholds, lefts, rights, values, X):
    """Mean over trees of the leaf value; trees are rows of padded 2-D arrays."""
    n_trees = features.shape[0]
    out = np.zeros(X.shape[0])
    for i in range(X.shape[0]):
        acc = 0.0
        for b in range(n_trees):
            k = 0
            while features[b, k] >= 0:
                if X[i, features[b, k]] <= thresholds[b, k]:
                    k = lefts[b, k]
                else:
                    k = rights[b, k]
            acc += values[b, k]
        out[i] = acc / n_trees
    return out


@njit(cache=True, nogil=True)
def sum_forest(features, thresholds, lefts, rights, values, X, scale):
    """``scale`` times the sum over trees of the leaf value."""
    n_trees = features.shape[0]
    out = np.zeros(X.shape[0])
    for i in range(X.shape[0]):
        acc = 0.0
        for b in range(n_trees):
            k = 0
            while features[b, k] >= 0:
                if X[i, features[b, k]] <= thresholds[b, k]:
                    k = lefts[b, k]
                else:
                    k = rights[b, k]
            acc += values[b, k]
        out[i] = scale * acc
    return out


def node_capacity(n: int, max_depth: int, min_leaf: int) -> int:
    by_depth = 2 ** (min(max_depth, 30) + 1) - 1
    by_size = 2 * max(1, n // max(1, min_leaf)) + 1
    return int(max(1, min(by_depth, by_size)))


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def apply(self, X: np.ndarray) -> np.ndarray:
        return apply_tree(self.feature, self.threshold, self.left, self.right,
                          np.ascontiguousarray(X, dtype=float))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.asarray(d["feature"], np.int64), np.asarray(d["threshold"], float),
                   np.asarray(d["left"], np.int64), np.asarray(d["right"], np.int64),
                   np.asarray(d["value"], float))


@dataclass
class PackedTrees:
    """Trees padded into rectangular arrays for the numba predictors."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @classmethod
    def pack(cls, trees: list[Tree]) -> "PackedTrees":
        width = max(t.n_nodes for t in trees)
        k = len(trees)
        feature = np.full((k, width), -1, np.int64)
        threshold = np.zeros((k, width))
        left = np.full((k, width), -1, np.int64)
        right = np.full((k, width), -1, np.int64)
        value = np.zeros((k, width))
        for b, t in enumerate(trees):
            s = t.n_nodes
            feature[b, :s], threshold[b, :s] = t.feature, t.threshold
            left[b, :s], right[b, :s], value[b, :s] = t.left, t.right, t.value
        return cls(feature, threshold, left, right, value)

    def mean(self, X: np.ndarray) -> np.ndarray:
        return predict_forest(self.feature, self.threshold, self.left, self.right, self.value,
                              np.ascontiguousarray(X, dtype=float))

    def scaled_sum(self, X: np.ndarray, scale: float) -> np.ndarray:
        return sum_forest(self.feature, self.threshold, self.left, self.right, self.value,
                          np.ascontiguousarray(X, dtype=float), float(scale))
