"""Training drivers and prediction for both learners.

Training canonicalizes sample order first (lexicographic by feature vector,
then label), so models are invariant to the row order of the input: all
internal accumulations then run over the same sequence no matter how the
caller shuffled the data. Bootstrap draws and per-node feature subsets come
from counter-based streams derived from the seed, which makes tree-parallel
training independent of the worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..errors import ValidationError
from . import rng
from .backends import backend_name, get_backend
from .binning import bin_counts, bin_matrix, compute_bin_edges, flatten_edges
from ._kernels_py import seq_mean
from .model import KIND_GBDT, KIND_RANDOM_FOREST, ForestModel, TrainConfig, Tree


def _validate_training_data(X, y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("X must be a 2-D matrix")
    if X.shape[1] < 1:
        raise ValidationError("X must have at least one feature")
    if y.shape != (X.shape[0],):
        raise ValidationError("y length must match X rows")
    if X.shape[0] < 2:
        raise ValidationError("need at least 2 training samples")
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise ValidationError(
            "training data contains non-finite values; drop incomplete samples first"
        )
    return X, y


def _canonical_order(X, y):
    keys = (y,) + tuple(X[:, j] for j in range(X.shape[1] - 1, -1, -1))
    return np.lexsort(keys)


def _default_names(p):
    return [f"f{j}" for j in range(p)]


def train_random_forest(X, y, config: TrainConfig | None = None,
                        feature_names=None, backend=None) -> ForestModel:
    """Bagged CART regression forest, deterministic for a given seed."""
    config = config or TrainConfig()
    if config.n_trees < 1:
        raise ValidationError("a random forest needs n_trees >= 1")
    X, y = _validate_training_data(X, y)
    n, p = X.shape
    kernels = get_backend(backend)

    order = _canonical_order(X, y)
    Xs = np.asfortranarray(X[order])
    ys = np.ascontiguousarray(y[order])
    mtry = config.mtry_for(p)

    def build(t):
        t_seed = rng.tree_seed(config.seed, t)
        if config.rf_bootstrap:
            idx = rng.bootstrap_indices(t_seed, n)
        else:
            idx = np.arange(n, dtype=np.int32)
        return Tree(*kernels.grow_cart(
            Xs, ys, idx, mtry, config.rf_min_leaf, config.rf_max_depth, t_seed))

    if config.threads > 1 and backend_name(kernels) == "compiled":
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            trees = list(pool.map(build, range(config.n_trees)))
    else:
        trees = [build(t) for t in range(config.n_trees)]

    return ForestModel(
        kind=KIND_RANDOM_FOREST,
        trees=trees,
        feature_names=list(feature_names) if feature_names else _default_names(p),
        config=config,
        seed=config.seed,
    )


def train_gbdt(X, y, config: TrainConfig | None = None,
               feature_names=None, backend=None) -> ForestModel:
    """Leaf-wise histogram gradient boosting with squared-error loss.

    base_score is the label mean; each round fits one tree to the current
    residuals on quantile-binned features and the prediction advances by
    learning_rate times the tree output.
    """
    config = config or TrainConfig()
    X, y = _validate_training_data(X, y)
    n, p = X.shape
    kernels = get_backend(backend)

    order = _canonical_order(X, y)
    Xs = X[order]
    ys = np.ascontiguousarray(y[order])

    edges = compute_bin_edges(Xs, config.gbdt_max_bins)
    binned = bin_matrix(Xs, edges)
    nb = bin_counts(edges)
    edges_flat, edges_off = flatten_edges(edges)

    base = seq_mean(ys)
    pred = np.full(n, base, dtype=np.float64)
    trees = []
    for _ in range(config.n_trees):
        residual = ys - pred
        *node_arrays, out = kernels.grow_gbdt_tree(
            binned, nb, edges_flat, edges_off, residual,
            config.gbdt_max_leaves, config.gbdt_min_leaf, config.gbdt_min_gain)
        trees.append(Tree(*node_arrays))
        pred = pred + config.gbdt_learning_rate * out

    return ForestModel(
        kind=KIND_GBDT,
        trees=trees,
        feature_names=list(feature_names) if feature_names else _default_names(p),
        base_score=base,
        learning_rate=config.gbdt_learning_rate,
        bin_edges=edges,
        config=config,
        seed=config.seed,
    )


def predict(model: ForestModel, X, backend=None) -> np.ndarray:
    """Per-row ensemble prediction; rows with non-finite features give NaN."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValidationError(
            f"X must have {model.n_features} columns, got "
            f"{X.shape[1] if X.ndim == 2 else 'non-2D'}"
        )
    kernels = get_backend(backend)
    finite = np.isfinite(X).all(axis=1)
    out = np.full(X.shape[0], np.nan, dtype=np.float64)
    if not finite.any():
        return out
    Xf = np.ascontiguousarray(X[finite])

    acc = np.zeros(Xf.shape[0], dtype=np.float64)
    first = None
    all_same = None
    for tree in model.trees:
        t_out = kernels.tree_apply(
            tree.feature, tree.threshold, tree.left, tree.right, tree.value, Xf)
        if model.kind == KIND_RANDOM_FOREST:
            if first is None:
                first = t_out
                all_same = np.ones(Xf.shape[0], dtype=bool)
            else:
                all_same &= t_out == first
        acc += t_out

    if model.kind == KIND_RANDOM_FOREST:
        if model.n_trees == 0:
            raise ValidationError("random forest model has no trees")
        result = acc / model.n_trees
        # The mean of identical tree outputs is that output, exactly.
        result[all_same] = first[all_same]
    else:
        result = model.base_score + model.learning_rate * acc
    out[finite] = result
    return out
