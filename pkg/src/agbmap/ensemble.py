"""K-fold training, wall-to-wall prediction, and the mean/std ensemble.

Each fold's model is trained on the other folds and predicts both its
held-out samples (for honest pooled metrics: every sample predicted exactly
once) and the full raster. The k fold maps combine per pixel into a mean map
and a population-standard-deviation uncertainty map; a pixel missing in any
fold is missing in both outputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .evaluation import MetricsReport, metrics
from .grids import RasterGrid, grids_aligned
from .learners import (
    KIND_GBDT,
    KIND_RANDOM_FOREST,
    ForestModel,
    TrainConfig,
    predict,
    train_gbdt,
    train_random_forest,
)
from .stack import FeatureStack

_TRAINERS = {
    KIND_GBDT: train_gbdt,
    KIND_RANDOM_FOREST: train_random_forest,
}


@dataclass
class FoldAssignment:
    k: int
    assignment: np.ndarray  # int32 fold index per sample
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)


def kfold_split(n: int, k: int = 5, seed: int = 0) -> FoldAssignment:
    """Seeded shuffle then contiguous partition; fold sizes differ by <= 1."""
    if n < k:
        raise ValidationError(f"cannot split {n} samples into {k} folds")
    if k < 2:
        raise ValidationError("k must be >= 2")
    order = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int32)
    base, remainder = divmod(n, k)
    start = 0
    for fold in range(k):
        size = base + (1 if fold < remainder else 0)
        assignment[order[start:start + size]] = fold
        start += size
    return FoldAssignment(k, assignment, seed)


@dataclass
class CvResult:
    models: list
    fold_metrics: list
    pooled_metrics: MetricsReport
    oof_predictions: np.ndarray  # one out-of-fold prediction per sample
    folds: FoldAssignment


def cv_train(samples, learner: str, config: TrainConfig,
             folds: FoldAssignment | None = None, k: int = 5,
             feature_names=None, backend=None) -> CvResult:
    """Train k models, each evaluated on its held-out fold.

    samples: LabeledSample list with features filled. Pooled metrics run
    over the concatenated out-of-fold predictions in sample order.
    """
    if learner not in _TRAINERS:
        raise ValidationError(f"unknown learner {learner!r}")
    n = len(samples)
    for s in samples:
        if s.features is None:
            raise ValidationError(f"sample {s.shot_id} has no features")
    X = np.asarray([s.features for s in samples], dtype=np.float64)
    y = np.asarray([s.agb_mg_ha for s in samples], dtype=np.float64)
    folds = folds or kfold_split(n, k, config.seed)
    if folds.assignment.size != n:
        raise ValidationError("fold assignment does not match sample count")

    trainer = _TRAINERS[learner]
    models, fold_reports = [], []
    oof = np.full(n, np.nan, dtype=np.float64)
    for fold in range(folds.k):
        train_idx = folds.train_indices(fold)
        test_idx = folds.test_indices(fold)
        if train_idx.size == 0 or test_idx.size == 0:
            raise ValidationError(f"fold {fold} is empty")
        model = trainer(X[train_idx], y[train_idx], config,
                        feature_names=feature_names, backend=backend)
        pred = predict(model, X[test_idx], backend=backend)
        oof[test_idx] = pred
        fold_reports.append(metrics(y[test_idx], pred, f"fold {fold}"))
        models.append(model)
    if np.isnan(oof).any():
        raise ValidationError("some samples were never predicted out of fold")
    pooled = metrics(y, oof, "pooled out-of-fold")
    return CvResult(models, fold_reports, pooled, oof, folds)


@dataclass
class MapPrediction:
    grid: RasterGrid
    n_clamped_negative: int
    n_nodata_pixels: int


def predict_map(model: ForestModel, stack: FeatureStack,
                chunk_rows: int = 256, backend=None) -> MapPrediction:
    """Wall-to-wall prediction over a stack, in row chunks.

    The stack's layer order must equal the model's feature order (a silent
    mismatch would scramble every feature, so it is a hard error). Pixels
    with nodata in any layer predict nodata; negative predictions clamp to
    zero and are counted. Results do not depend on chunk_rows.
    """
    if list(stack.layer_names) != list(model.feature_names):
        raise ValidationError(
            "stack layer order does not match model feature order: "
            f"{stack.layer_names} vs {model.feature_names}"
        )
    if chunk_rows < 1:
        raise ValidationError("chunk_rows must be >= 1")
    spec = stack.grid_spec
    ref = stack.layers[0]
    nodata = ref.nodata
    out = np.full((spec.n_rows, spec.n_cols), np.float32(nodata), dtype=np.float32)
    n_clamped = 0
    n_nodata = 0
    for r0 in range(0, spec.n_rows, chunk_rows):
        r1 = min(r0 + chunk_rows, spec.n_rows)
        rows = r1 - r0
        X = np.empty((rows * spec.n_cols, len(stack.layers)), dtype=np.float64)
        valid = np.ones(rows * spec.n_cols, dtype=bool)
        for j, grid in enumerate(stack.layers):
            block = grid.values[r0:r1].astype(np.float64).ravel()
            X[:, j] = block
            valid &= grid.valid_mask()[r0:r1].ravel()
        n_nodata += int(np.count_nonzero(~valid))
        if not valid.any():
            continue
        pred = predict(model, X[valid], backend=backend)
        neg = pred < 0.0
        n_clamped += int(np.count_nonzero(neg))
        pred[neg] = 0.0
        chunk_out = np.full(rows * spec.n_cols, np.float32(nodata), dtype=np.float32)
        chunk_out[valid] = pred.astype(np.float32)
        out[r0:r1] = chunk_out.reshape(rows, spec.n_cols)
    grid = RasterGrid(spec.origin_x, spec.origin_y, spec.pixel_size,
                      spec.n_rows, spec.n_cols, spec.crs_id, nodata,
                      out, "AGB_PRED")
    return MapPrediction(grid, n_clamped, n_nodata)


def ensemble_maps(maps):
    """Per-pixel mean and population std over k aligned fold maps.

    Pixels valid in all k maps get values; anything else is nodata in both
    outputs. Population convention: divide by k (the folds are the whole
    ensemble, not a sample from one).
    """
    if len(maps) < 2:
        raise ValidationError("need at least 2 maps to ensemble")
    ref = maps[0]
    for i, g in enumerate(maps[1:], start=1):
        if not grids_aligned(ref, g):
            raise ValidationError(f"misaligned: map {i}")
    k = len(maps)
    valid = maps[0].valid_mask()
    for g in maps[1:]:
        valid &= g.valid_mask()

    total = np.zeros(ref.values.shape, dtype=np.float64)
    for g in maps:  # fold order; order-free in exact arithmetic
        total += g.values.astype(np.float64)
    mean = total / k
    ssd = np.zeros_like(total)
    for g in maps:
        d = g.values.astype(np.float64) - mean
        ssd += d * d
    std = np.sqrt(ssd / k)

    nodata = ref.nodata
    mean_vals = np.where(valid, mean, nodata).astype(np.float32)
    std_vals = np.where(valid, std, nodata).astype(np.float32)
    mean_grid = ref.like(mean_vals, "AGB_MEAN")
    std_grid = ref.like(std_vals, "AGB_STD")
    return mean_grid, std_grid
