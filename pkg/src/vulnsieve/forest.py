"""Random forest of Gini decision trees with sqrt(d) feature subsampling.

Split search runs on histogram-binned features (at most 64 bins per
feature), which keeps per-node cost linear in the node size. The growing
loop is JIT-compiled; given the same data, hyperparameters, and seed the
forest is bit-reproducible.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

MAX_BINS = 64


def bin_features(X: np.ndarray, max_bins: int = MAX_BINS) -> tuple[list[np.ndarray], np.ndarray, np.ndarray]:
    """Per-feature bin edges plus the binned matrix.

    Features with few unique values get exact midpoint edges; wider ones get
    quantile edges. Returns (edges per feature, uint8 bin matrix, bin counts).
    """
    n, d = X.shape
    edges_list: list[np.ndarray] = []
    Xb = np.empty((n, d), dtype=np.uint8)
    n_bins = np.empty(d, dtype=np.int32)
    for j in range(d):
        col = X[:, j]
        uniq = np.unique(col)
        if len(uniq) <= 1:
            edges = np.empty(0, dtype=np.float64)
        elif len(uniq) <= max_bins:
            edges = (uniq[1:] + uniq[:-1]) / 2.0
        else:
            qs = np.quantile(col, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
            edges = np.unique(qs)
        edges_list.append(edges)
        Xb[:, j] = np.searchsorted(edges, col, side="right").astype(np.uint8)
        n_bins[j] = len(edges) + 1
    return edges_list, Xb, n_bins


def apply_bins(X: np.ndarray, edges_list: list[np.ndarray]) -> np.ndarray:
    n, d = X.shape
    if d != len(edges_list):
        raise ValueError(f"expected {len(edges_list)} features, got {d}")
    Xb = np.empty((n, d), dtype=np.uint8)
    for j, edges in enumerate(edges_list):
        Xb[:, j] = np.searchsorted(edges, X[:, j], side="right").astype(np.uint8)
    return Xb


@njit(cache=True)
def _grow_tree(Xb, y, n_bins, tree_seed, max_depth, min_leaf, mtry, max_bins, bootstrap):
    np.random.seed(tree_seed)
    n_total = Xb.shape[0]
    d = Xb.shape[1]
    idx = np.empty(n_total, dtype=np.int32)
    for i in range(n_total):
        idx[i] = np.random.randint(0, n_total) if bootstrap else i
    n = n_total

    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int32)
    thresh = np.zeros(cap, dtype=np.uint8)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap, dtype=np.float64)

    stack_node = np.empty(cap, dtype=np.int32)
    stack_start = np.empty(cap, dtype=np.int32)
    stack_end = np.empty(cap, dtype=np.int32)
    stack_depth = np.empty(cap, dtype=np.int32)
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = n
    stack_depth[0] = 0
    top = 1
    node_count = 1

    feat_pool = np.empty(d, dtype=np.int32)
    hist = np.zeros((max_bins, 2), dtype=np.int64)
    buf = np.empty(n, dtype=np.int32)

    while top > 0:
        top -= 1
        node = stack_node[top]
        start = stack_start[top]
        end = stack_end[top]
        depth = stack_depth[top]
        m = end - start
        pos = 0
        for i in range(start, end):
            pos += y[idx[i]]
        value[node] = pos / m
        if m < 2 * min_leaf or m < 2 or pos == 0 or pos == m:
            continue
        if max_depth >= 0 and depth >= max_depth:
            continue

        for j in range(d):
            feat_pool[j] = j
        kf = mtry if mtry < d else d
        for j in range(kf):
            r = j + np.random.randint(0, d - j)
            tmp = feat_pool[j]
            feat_pool[j] = feat_pool[r]
            feat_pool[r] = tmp

        best_cost = 1e18
        best_feat = -1
        best_bin = 0
        for jj in range(kf):
            f = feat_pool[jj]
            nb = n_bins[f]
            if nb < 2:
                continue
            for b in range(nb):
                hist[b, 0] = 0
                hist[b, 1] = 0
            for i in range(start, end):
                row = idx[i]
                hist[Xb[row, f], y[row]] += 1
            left_tot = 0
            left_pos = 0
            for b in range(nb - 1):
                left_tot += hist[b, 0] + hist[b, 1]
                left_pos += hist[b, 1]
                right_tot = m - left_tot
                if left_tot < min_leaf or right_tot < min_leaf:
                    continue
                right_pos = pos - left_pos
                pl = left_pos / left_tot
                pr = right_pos / right_tot
                cost = left_tot * 2.0 * pl * (1.0 - pl) + right_tot * 2.0 * pr * (1.0 - pr)
                if cost < best_cost:
                    best_cost = cost
                    best_feat = f
                    best_bin = b
        if best_feat < 0:
            continue

        nl = 0
        for i in range(start, end):
            if Xb[idx[i], best_feat] <= best_bin:
                buf[nl] = idx[i]
                nl += 1
        k = nl
        for i in range(start, end):
            if Xb[idx[i], best_feat] > best_bin:
                buf[k] = idx[i]
                k += 1
        for i in range(m):
            idx[start + i] = buf[i]

        feature[node] = best_feat
        thresh[node] = best_bin
        left_id = node_count
        right_id = node_count + 1
        node_count += 2
        left[node] = left_id
        right[node] = right_id
        stack_node[top] = left_id
        stack_start[top] = start
        stack_end[top] = start + nl
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = right_id
        stack_start[top] = start + nl
        stack_end[top] = end
        stack_depth[top] = depth + 1
        top += 1

    return (
        feature[:node_count].copy(),
        thresh[:node_count].copy(),
        left[:node_count].copy(),
        right[:node_count].copy(),
        value[:node_count].copy(),
    )


@njit(cache=True)
def _leaf_values(Xb, feature, thresh, left, right, value):
    n = Xb.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if Xb[i, feature[node]] <= thresh[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


class Forest:
    """Fitted ensemble; score is the fraction of positive tree votes."""

    def __init__(self, edges_list: list[np.ndarray], trees: list[tuple], n_features: int) -> None:
        self.edges_list = edges_list
        self.trees = trees
        self.n_features = n_features


def fit_forest(
    X: np.ndarray,
    y: np.ndarray,
    n_trees: int = 100,
    max_depth: int | None = None,
    min_leaf: int = 1,
    seed: int = 0,
    bootstrap: bool = True,
) -> Forest:
    """Bag ``n_trees`` Gini trees over bootstrap samples of (X, y).

    ``bootstrap=False`` grows each tree on the full sample, which makes a
    single unbounded tree memorize any consistent dataset.
    """
    n, d = X.shape
    edges_list, Xb, n_bins = bin_features(X)
    mtry = max(1, int(round(math.sqrt(d))))
    md = -1 if max_depth is None else int(max_depth)
    tree_seeds = np.random.SeedSequence(seed).generate_state(n_trees, dtype=np.uint32)
    y8 = np.ascontiguousarray(y, dtype=np.int64)
    trees = [
        _grow_tree(
            Xb, y8, n_bins, np.uint32(tree_seeds[t]), md, min_leaf, mtry, MAX_BINS,
            1 if bootstrap else 0,
        )
        for t in range(n_trees)
    ]
    return Forest(edges_list, trees, d)


def forest_scores(forest: Forest, X: np.ndarray) -> np.ndarray:
    """Positive-vote fraction per row; leaf ties contribute half a vote."""
    if X.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got {X.shape[1]}")
    Xb = apply_bins(X, forest.edges_list)
    votes = np.zeros(X.shape[0], dtype=np.float64)
    for feature, thresh, left, right, value in forest.trees:
        leaf = _leaf_values(Xb, feature, thresh, left, right, value)
        votes += np.where(leaf > 0.5, 1.0, np.where(leaf == 0.5, 0.5, 0.0))
    return votes / len(forest.trees)
