"""Exhaustive-scan reference tree for checking the histogram grower.

Grows a single regression tree leaf-wise exactly like the booster, but scans
every midpoint between consecutive distinct raw feature values instead of
histogram bins. When each feature has fewer distinct values than the bin
budget, the binned tree must induce the same sample partition node for node;
tests assert that. Kept deliberately separate from the production kernels:
this module is the oracle, so it shares no split-search code with them.
"""
from __future__ import annotations

import numpy as np

from ._kernels_py import NO_FEATURE, seq_sum
from .model import Tree


class _Leaf:
    __slots__ = ("slot", "idx", "total", "all_equal", "gain", "f", "thr")

    def __init__(self, slot, idx, total, all_equal):
        self.slot = slot
        self.idx = idx
        self.total = total
        self.all_equal = all_equal
        self.gain = -np.inf
        self.f = -1
        self.thr = 0.0


def _best_exact_split(X, y, leaf, min_leaf):
    n = leaf.idx.size
    if leaf.all_equal or n < 2 * min_leaf:
        return
    y_node = y[leaf.idx]
    for f in range(X.shape[1]):
        vals = X[leaf.idx, f]
        order = np.argsort(vals, kind="stable")
        v = vals[order]
        prefix = np.cumsum(y_node[order])
        total = float(prefix[-1])
        n_left = np.arange(1, n)
        n_right = n - n_left
        valid = (v[:-1] < v[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        g_left = prefix[:-1]
        g_right = total - g_left
        gains = (g_left * g_left / n_left + g_right * g_right / n_right
                 - total * total / n)
        gains = np.where(valid, gains, -np.inf)
        k = int(np.argmax(gains))
        if float(gains[k]) > leaf.gain:
            thr = (float(v[k]) + float(v[k + 1])) * 0.5
            if thr == float(v[k + 1]):
                thr = float(v[k])
            leaf.gain, leaf.f, leaf.thr = float(gains[k]), f, thr


def exact_tree_reference(X, y, max_leaves, min_leaf=1, min_gain=0.0) -> Tree:
    """Greedy leaf-wise regression tree with an exhaustive threshold scan."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n = y.size

    feature, threshold = [NO_FEATURE], [0.0]
    left, right, value = [-1], [-1], [0.0]
    root = _Leaf(0, np.arange(n, dtype=np.int64), seq_sum(y),
                 bool(np.all(y == y[0])))
    _best_exact_split(X, y, root, min_leaf)
    leaves = [root]
    n_leaves = 1
    while n_leaves < max_leaves:
        pick = None
        for leaf in leaves:
            if leaf.f >= 0 and leaf.gain > min_gain:
                if pick is None or leaf.gain > pick.gain:
                    pick = leaf
        if pick is None:
            break
        mask = X[pick.idx, pick.f] <= pick.thr
        idx_l, idx_r = pick.idx[mask], pick.idx[~mask]
        y_l, y_r = y[idx_l], y[idx_r]
        feature[pick.slot], threshold[pick.slot] = pick.f, pick.thr
        slot_l = len(feature)
        left[pick.slot], right[pick.slot] = slot_l, slot_l + 1
        for _ in range(2):
            feature.append(NO_FEATURE)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
        child_l = _Leaf(slot_l, idx_l, seq_sum(y_l), bool(np.all(y_l == y_l[0])))
        child_r = _Leaf(slot_l + 1, idx_r, seq_sum(y_r), bool(np.all(y_r == y_r[0])))
        _best_exact_split(X, y, child_l, min_leaf)
        _best_exact_split(X, y, child_r, min_leaf)
        leaves.remove(pick)
        leaves.append(child_l)
        leaves.append(child_r)
        n_leaves += 1

    for leaf in leaves:
        y_leaf = y[leaf.idx]
        first = float(y_leaf[0])
        value[leaf.slot] = first if np.all(y_leaf == first) \
            else leaf.total / y_leaf.size
    return Tree(
        np.array(feature, dtype=np.int32),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int32),
        np.array(right, dtype=np.int32),
        np.array(value, dtype=np.float64),
    )


def tree_partitions(tree: Tree, X) -> list:
    """(slot, feature, frozenset of row ids going left) per internal node.

    The partition view of a tree: two trees that split the same sample sets
    on the same features are equivalent regardless of threshold values.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    out = []
    stack = [(0, np.arange(X.shape[0], dtype=np.int64))]
    while stack:
        slot, idx = stack.pop()
        f = int(tree.feature[slot])
        if f == NO_FEATURE:
            continue
        mask = X[idx, f] <= tree.threshold[slot]
        out.append((slot, f, frozenset(idx[mask].tolist())))
        stack.append((int(tree.right[slot]), idx[~mask]))
        stack.append((int(tree.left[slot]), idx[mask]))
    return out
