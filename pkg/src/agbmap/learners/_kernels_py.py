"""Pure-numpy twins of the compiled tree kernels.

These are the reference kernels: the Cython module (_core) reimplements the
same loops and must produce bit-identical arrays. Every float reduction here
is strictly sequential (np.cumsum / np.bincount, both plain left-to-right
accumulation in C), additions happen in the same order as the compiled
loops, and ties break identically, so "same result" means equal bytes, not
equal within tolerance.

Shared numeric rules (the determinism contract):

* node sample lists keep relative order through splits;
* split scans sort by (value, position-in-node) so ties are stable;
* candidate gain = GL^2/nL + GR^2/nR - G^2/n, compared strictly (>),
  features ascending, candidates ascending;
* thresholds are midpoints, nudged down when rounding lands on the upper
  value, so "x <= threshold" reproduces the scanned partition exactly;
* a node's target sum is recomputed sequentially over its own sample order;
* a leaf whose targets are all identical stores that value exactly
  (the mean of equal values must not pick up rounding).
"""
from __future__ import annotations

import numpy as np

from .rng import feature_subset

NO_FEATURE = -1


def seq_sum(values: np.ndarray) -> float:
    """Strictly left-to-right float64 sum."""
    if values.size == 0:
        return 0.0
    return float(np.cumsum(values)[-1])


def seq_mean(values: np.ndarray) -> float:
    """Sequential mean; exact when all values are identical."""
    first = float(values[0])
    if np.all(values == first):
        return first
    return seq_sum(values) / values.size


def _leaf_value(values: np.ndarray, total: float) -> float:
    first = float(values[0])
    if np.all(values == first):
        return first
    return total / values.size


def grow_cart(X, y, sample_idx, mtry, min_leaf, max_depth, tree_seed):
    """Grow one CART regression tree on a (possibly repeated) sample list.

    X: (n, p) float64; y: float64; sample_idx: int32 row draws (bootstrap).
    Splits maximize the variance gain over an mtry feature subset drawn per
    node from the seeded stream. Nodes are numbered in creation order, left
    child allocated before right, left subtree grown first (DFS).
    Returns (feature, threshold, left, right, value) node arrays.
    """
    p = X.shape[1]
    idx0 = np.asarray(sample_idx, dtype=np.int64)
    y0 = y[idx0]

    feature, threshold = [NO_FEATURE], [0.0]
    left, right, value = [-1], [-1], [0.0]
    stack = [(0, idx0, seq_sum(y0), bool(np.all(y0 == y0[0])), 0)]
    while stack:
        slot, idx, total, all_equal, depth = stack.pop()
        n = idx.size
        y_node = y[idx]
        best_gain, best = -np.inf, None
        can_split = (
            n >= 2
            and n >= 2 * min_leaf
            and not all_equal
            and (max_depth == 0 or depth < max_depth)
        )
        if can_split:
            g2n = None
            for f in feature_subset(tree_seed, slot, p, mtry):
                vals = X[idx, f]
                order = np.argsort(vals, kind="stable")
                v = vals[order]
                prefix = np.cumsum(y_node[order])
                total_scan = float(prefix[-1])
                n_left = np.arange(1, n)
                n_right = n - n_left
                valid = (v[:-1] < v[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
                if not valid.any():
                    continue
                g_left = prefix[:-1]
                g_right = total_scan - g_left
                g2n = total_scan * total_scan / n
                gains = g_left * g_left / n_left + g_right * g_right / n_right - g2n
                gains = np.where(valid, gains, -np.inf)
                k = int(np.argmax(gains))
                if float(gains[k]) > best_gain:
                    thr = (float(v[k]) + float(v[k + 1])) * 0.5
                    if thr == float(v[k + 1]):
                        thr = float(v[k])
                    best_gain, best = float(gains[k]), (f, thr)
        if best is not None and best_gain > 0.0:
            f, thr = best
            mask = X[idx, f] <= thr
            idx_l, idx_r = idx[mask], idx[~mask]
            y_l, y_r = y[idx_l], y[idx_r]
            feature[slot], threshold[slot] = f, thr
            slot_l = len(feature)
            left[slot], right[slot] = slot_l, slot_l + 1
            for _ in range(2):
                feature.append(NO_FEATURE)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(0.0)
            stack.append((slot_l + 1, idx_r, seq_sum(y_r),
                          bool(np.all(y_r == y_r[0])), depth + 1))
            stack.append((slot_l, idx_l, seq_sum(y_l),
                          bool(np.all(y_l == y_l[0])), depth + 1))
        else:
            value[slot] = _leaf_value(y_node, total)
    return (
        np.array(feature, dtype=np.int32),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int32),
        np.array(right, dtype=np.int32),
        np.array(value, dtype=np.float64),
    )


class _Leaf:
    __slots__ = ("slot", "idx", "total", "all_equal", "gain", "f", "bin")

    def __init__(self, slot, idx, total, all_equal):
        self.slot = slot
        self.idx = idx
        self.total = total
        self.all_equal = all_equal
        self.gain = -np.inf
        self.f = -1
        self.bin = -1


def _best_histogram_split(binned, n_bins, residual, leaf, min_leaf):
    n_node = leaf.idx.size
    if leaf.all_equal or n_node < 2 * min_leaf:
        return
    r_node = residual[leaf.idx]
    total = leaf.total
    g2n = total * total / n_node
    for f in range(binned.shape[1]):
        nb = int(n_bins[f])
        if nb < 2:
            continue
        bins_f = binned[leaf.idx, f]
        hist_sum = np.bincount(bins_f, weights=r_node, minlength=nb)
        hist_cnt = np.bincount(bins_f, minlength=nb)
        g_left = np.cumsum(hist_sum)[:-1]
        n_left = np.cumsum(hist_cnt)[:-1]
        n_right = n_node - n_left
        valid = (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        g_right = total - g_left
        gains = (
            g_left * g_left / np.maximum(n_left, 1)
            + g_right * g_right / np.maximum(n_right, 1)
            - g2n
        )
        gains = np.where(valid, gains, -np.inf)
        k = int(np.argmax(gains))
        if float(gains[k]) > leaf.gain:
            leaf.gain, leaf.f, leaf.bin = float(gains[k]), f, k


def grow_gbdt_tree(binned, n_bins, edges_flat, edges_offsets, residual,
                   max_leaves, min_leaf, min_gain):
    """Grow one histogram tree leaf-wise on the current residuals.

    binned: (n, p) uint16 bin indices; n_bins: bins per feature; edge values
    give the real split thresholds. Always splits the live leaf with the
    highest gain (ties to the earliest-created leaf) until max_leaves or no
    leaf has gain > min_gain with both sides >= min_leaf.
    Returns the node arrays plus each sample's leaf value (the tree output).
    """
    n = residual.shape[0]
    feature, threshold = [NO_FEATURE], [0.0]
    left, right, value = [-1], [-1], [0.0]

    root = _Leaf(0, np.arange(n, dtype=np.int64), seq_sum(residual),
                 bool(np.all(residual == residual[0])))
    _best_histogram_split(binned, n_bins, residual, root, min_leaf)
    leaves = [root]
    n_leaves = 1
    while n_leaves < max_leaves:
        pick = None
        for leaf in leaves:  # ascending creation order resolves gain ties
            if leaf.f >= 0 and leaf.gain > min_gain:
                if pick is None or leaf.gain > pick.gain:
                    pick = leaf
        if pick is None:
            break
        f, b = pick.f, pick.bin
        thr = float(edges_flat[edges_offsets[f] + b])
        mask = binned[pick.idx, f] <= b
        idx_l, idx_r = pick.idx[mask], pick.idx[~mask]
        r_l, r_r = residual[idx_l], residual[idx_r]

        feature[pick.slot], threshold[pick.slot] = f, thr
        slot_l = len(feature)
        left[pick.slot], right[pick.slot] = slot_l, slot_l + 1
        for _ in range(2):
            feature.append(NO_FEATURE)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
        child_l = _Leaf(slot_l, idx_l, seq_sum(r_l), bool(np.all(r_l == r_l[0])))
        child_r = _Leaf(slot_l + 1, idx_r, seq_sum(r_r), bool(np.all(r_r == r_r[0])))
        _best_histogram_split(binned, n_bins, residual, child_l, min_leaf)
        _best_histogram_split(binned, n_bins, residual, child_r, min_leaf)
        leaves.remove(pick)
        leaves.append(child_l)
        leaves.append(child_r)
        n_leaves += 1

    out = np.empty(n, dtype=np.float64)
    for leaf in leaves:
        v = _leaf_value(residual[leaf.idx], leaf.total)
        value[leaf.slot] = v
        out[leaf.idx] = v
    return (
        np.array(feature, dtype=np.int32),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int32),
        np.array(right, dtype=np.int32),
        np.array(value, dtype=np.float64),
        out,
    )


def tree_apply(feature, threshold, left, right, value, X):
    """Leaf value per row of X ("go left iff value <= threshold")."""
    n = X.shape[0]
    out = np.empty(n, dtype=np.float64)
    stack = [(0, np.arange(n, dtype=np.int64))]
    while stack:
        node, idx = stack.pop()
        if idx.size == 0:
            continue
        f = int(feature[node])
        if f == NO_FEATURE:
            out[idx] = value[node]
            continue
        mask = X[idx, f] <= threshold[node]
        stack.append((int(right[node]), idx[~mask]))
        stack.append((int(left[node]), idx[mask]))
    return out
