"""Quantile feature binning for the histogram booster.

Edges are placed between adjacent distinct values, at rank-spaced targets
when a feature has more distinct values than max_bins (identical values
always collapse into one bin). A value x falls in bin b when
edges[b-1] < x <= edges[b]; split thresholds are therefore the edge values
themselves and prediction never needs to re-bin.
"""
from __future__ import annotations

import numpy as np


def compute_bin_edges(X: np.ndarray, max_bins: int) -> list:
    """Per-feature sorted edge arrays (each of length < max_bins)."""
    edges = []
    for f in range(X.shape[1]):
        col = X[:, f]
        values, counts = np.unique(col, return_counts=True)
        if values.size <= 1:
            edges.append(np.empty(0, dtype=np.float64))
        elif values.size <= max_bins:
            edges.append(((values[:-1] + values[1:]) * 0.5).astype(np.float64))
        else:
            cum = np.cumsum(counts)
            n = col.size
            targets = (np.arange(1, max_bins, dtype=np.int64) * n) // max_bins
            targets = np.maximum(targets, 1)
            pos = np.unique(np.searchsorted(cum, targets, side="left"))
            pos = pos[pos < values.size - 1]
            edges.append(((values[pos] + values[pos + 1]) * 0.5).astype(np.float64))
    return edges


def bin_matrix(X: np.ndarray, edges: list) -> np.ndarray:
    """Bin indices as a Fortran-ordered uint16 matrix."""
    n, p = X.shape
    binned = np.empty((n, p), dtype=np.uint16, order="F")
    for f in range(p):
        binned[:, f] = np.searchsorted(edges[f], X[:, f], side="left").astype(np.uint16)
    return binned


def flatten_edges(edges: list):
    """(flat float64 values, int64 offsets) view used by the kernels."""
    offsets = np.zeros(len(edges) + 1, dtype=np.int64)
    for f, e in enumerate(edges):
        offsets[f + 1] = offsets[f] + e.size
    flat = np.concatenate(edges) if offsets[-1] else np.empty(0, dtype=np.float64)
    return np.ascontiguousarray(flat, dtype=np.float64), offsets


def bin_counts(edges: list) -> np.ndarray:
    """Number of bins per feature (edges + 1), int32."""
    return np.array([e.size + 1 for e in edges], dtype=np.int32)
