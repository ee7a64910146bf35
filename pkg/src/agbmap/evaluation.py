"""Accuracy metrics, data splits, and map validation.

R2 = 1 - sum((y_i - yhat_i)^2) / sum((y_i - ybar)^2)
RMSE = sqrt(mean((y_i - yhat_i)^2))
Bias = mean(yhat_i - y_i)   (predicted minus observed)

Zero variance in the observations leaves R2 undefined; it is reported as
None with a flag while RMSE and bias are still computed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import crs as crs_mod
from .calibration import plot_agb
from .errors import ValidationError

DEFAULT_SLOPE_BIN_EDGES = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, math.inf)

#: fewer pairs than this in a slope bin -> counts only, no metrics
MIN_STRATUM_N = 3


@dataclass
class MetricsReport:
    n: int
    r2: float | None
    rmse: float | None
    bias: float | None
    label: str = ""
    r2_undefined: bool = False
    strata: list = field(default_factory=list)  # (bin_label, MetricsReport)

    def to_json_dict(self) -> dict:
        d = {
            "n": self.n, "r2": self.r2, "rmse": self.rmse, "bias": self.bias,
            "label": self.label, "r2_undefined": self.r2_undefined,
        }
        if self.strata:
            d["strata"] = [
                {"bin": name, **report.to_json_dict()} for name, report in self.strata
            ]
        return d


def metrics(y, y_hat, label: str = "") -> MetricsReport:
    """Accuracy of predictions y_hat against observations y."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.ndim != 1 or y.size < 1:
        raise ValidationError("y and y_hat must be equal-length 1-D arrays")
    diff = y_hat - y
    sse = float(np.dot(diff, diff))
    rmse = math.sqrt(sse / y.size)
    bias = float(diff.mean())
    dev = y - y.mean()
    sst = float(np.dot(dev, dev))
    if sst == 0.0:
        return MetricsReport(y.size, None, rmse, bias, label, r2_undefined=True)
    return MetricsReport(y.size, 1.0 - sse / sst, rmse, bias, label)


def holdout_split(samples, ratio: float = 0.6, seed: int = 0):
    """Seeded shuffle into (train, test); train gets floor(ratio * n)."""
    n = len(samples)
    if n < 2:
        raise ValidationError("need at least 2 samples to split")
    if not 0.0 < ratio < 1.0:
        raise ValidationError("ratio must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(ratio * n))
    train_idx = sorted(order[:n_train].tolist())
    test_idx = sorted(order[n_train:].tolist())
    return [samples[i] for i in train_idx], [samples[i] for i in test_idx]


@dataclass
class PlotValidation:
    metrics: MetricsReport
    pairs: list   # (plot_id, observed_mg_ha, predicted_mg_ha)
    n_excluded_nodata: int
    n_outside_extent: int


def validate_against_plots(agb_map, plots, label: str = "plots") -> PlotValidation:
    """Compare a biomass map against field plots at their nearest pixels.

    Plots over nodata pixels are excluded and counted (map gaps are normal:
    masked non-forest, unfilled tiles). Plot AGB is computed on the fly when
    a plot has trees but no stored density.
    """
    spec = agb_map.spec
    valid = agb_map.valid_mask()
    observed, predicted, pairs = [], [], []
    n_nodata = n_outside = 0
    for plot in plots:
        agb = plot.agb_mg_ha
        if agb is None:
            agb = plot_agb(plot)
        x, y = crs_mod.geo_to_map(spec.crs_id, plot.lat, plot.lon)
        row, col = spec.index_for(float(x), float(y))
        if not (0 <= row < spec.n_rows and 0 <= col < spec.n_cols):
            n_outside += 1
            continue
        if not valid[row, col]:
            n_nodata += 1
            continue
        pred = float(agb_map.values[row, col])
        observed.append(agb)
        predicted.append(pred)
        pairs.append((plot.plot_id, agb, pred))
    if not observed:
        raise ValidationError("no usable plot/pixel pairs")
    return PlotValidation(
        metrics(np.array(observed), np.array(predicted), label),
        pairs, n_nodata, n_outside,
    )


def slope_stratified_metrics(pairs, bin_edges=DEFAULT_SLOPE_BIN_EDGES,
                             label: str = "slope-stratified") -> MetricsReport:
    """Metrics overall and per slope bin [edge_i, edge_i+1).

    pairs: sequence of (observed, predicted, slope_deg). Bins with fewer
    than MIN_STRATUM_N pairs report counts only.
    """
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValidationError("pairs must be (observed, predicted, slope_deg) triples")
    edges = list(bin_edges)
    if sorted(edges) != edges or len(edges) < 2:
        raise ValidationError("bin_edges must be ascending with at least two entries")
    y, y_hat, slope = arr[:, 0], arr[:, 1], arr[:, 2]
    overall = metrics(y, y_hat, label)
    for lo, hi in zip(edges[:-1], edges[1:]):
        name = f"[{lo:g}, {hi:g})"
        mask = (slope >= lo) & (slope < hi)
        n = int(np.count_nonzero(mask))
        if n >= MIN_STRATUM_N:
            overall.strata.append((name, metrics(y[mask], y_hat[mask], name)))
        else:
            overall.strata.append((name, MetricsReport(n, None, None, None, name,
                                                       r2_undefined=True)))
    return overall
