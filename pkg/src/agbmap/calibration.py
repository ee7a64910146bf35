"""Field biomass and the local height-to-biomass model.

Per-tree biomass follows the national allometry W = 0.1355*(D^2*H)^0.817
(W in kg, D = DBH in cm, H = height in m); plot densities sum qualifying
trees (DBH >= 5 cm by default) over the plot area in hectares. The RH
percentile best correlated with plot biomass is selected, a power or linear
curve is fitted, and footprints are labeled by evaluating it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .errors import FitError, ValidationError

ALLOMETRY_COEF = 0.1355
ALLOMETRY_EXP = 0.817

FORM_POWER = "power"
FORM_LINEAR = "linear"

DEFAULT_PERCENTILE_CANDIDATES = tuple(range(30, 99))


def tree_agb(dbh_cm, height_m):
    """Single-tree biomass in kg from DBH (cm) and height (m)."""
    d = np.asarray(dbh_cm, dtype=np.float64)
    h = np.asarray(height_m, dtype=np.float64)
    if np.any(d <= 0) or np.any(h <= 0):
        raise ValueError("dbh_cm and height_m must be > 0")
    w = ALLOMETRY_COEF * (d * d * h) ** ALLOMETRY_EXP
    return float(w) if w.ndim == 0 else w


def plot_agb(plot, min_dbh_cm: float = 5.0) -> float:
    """Plot biomass density in Mg/ha; trees below min_dbh_cm are excluded."""
    if plot.diameter_m <= 0:
        raise ValueError("plot diameter must be > 0")
    total_kg = 0.0
    for tree in plot.trees:
        if tree.dbh_cm >= min_dbh_cm:
            total_kg += tree_agb(tree.dbh_cm, tree.height_m)
    area_m2 = math.pi * (plot.diameter_m / 2.0) ** 2
    return (total_kg / 1000.0) * (10000.0 / area_m2)


@dataclass
class PercentileCorrelation:
    percentile: int
    pearson_r: float | None
    n: int
    skipped_no_variance: bool = False


def _pearson(x, y) -> float:
    xd = x - x.mean()
    yd = y - y.mean()
    denom = math.sqrt(float(np.dot(xd, xd)) * float(np.dot(yd, yd)))
    return float(np.dot(xd, yd)) / denom


def select_rh_percentile(pairs, candidates=DEFAULT_PERCENTILE_CANDIDATES):
    """Pick the RH percentile whose heights correlate best with plot AGB.

    pairs: sequence of (agb_mg_ha, {percentile: height_m}). Returns
    (best_percentile, table) where the table holds one PercentileCorrelation
    per candidate present in the data. Candidates with zero height variance
    are skipped and flagged.
    """
    if len(pairs) < 3:
        raise FitError(f"need at least 3 plot/footprint pairs, got {len(pairs)}")
    agb = np.array([float(a) for a, _ in pairs], dtype=np.float64)
    if float(np.ptp(agb)) == 0.0:
        raise FitError("plot AGB has zero variance; correlation undefined")

    table = []
    best = None
    for pct in candidates:
        heights = [rh.get(pct) for _, rh in pairs]
        if any(h is None for h in heights):
            continue
        h = np.asarray(heights, dtype=np.float64)
        if float(np.ptp(h)) == 0.0:
            table.append(PercentileCorrelation(pct, None, len(pairs), True))
            continue
        r = _pearson(h, agb)
        table.append(PercentileCorrelation(pct, r, len(pairs)))
        if best is None or r > best[1]:
            best = (pct, r)
    if best is None:
        raise FitError("no candidate percentile has usable variance")
    return best[0], table


@dataclass
class RhAgbModel:
    """Calibration from an RH height to biomass density (Mg/ha).

    Power form AGB = a*RH^b (fitted as ln-ln least squares, zero-AGB pairs
    excluded from the log fit and counted); linear form AGB = a + b*RH.
    Predictions are clamped to >= 0.
    """

    rh_percentile: int
    form: str
    a: float
    b: float
    r2: float
    rmse_mg_ha: float
    n_plots: int
    region_label: str = ""
    excluded_zero_agb: int = 0
    degenerate_r2: bool = False
    fitted_on: str = ""

    def __post_init__(self):
        if self.form == FORM_POWER:
            if not self.a > 0:
                raise ValidationError("power form requires a > 0")
        elif self.form != FORM_LINEAR:
            raise ValidationError(f"unknown calibration form: {self.form!r}")

    def predict(self, rh_m):
        """Biomass density for RH heights; negatives clamp to 0."""
        rh = np.asarray(rh_m, dtype=np.float64)
        if self.form == FORM_POWER:
            if np.any(rh < 0):
                raise ValueError("rh_m must be >= 0 for the power form")
            out = self.a * np.power(rh, self.b)
        else:
            out = self.a + self.b * rh
        return np.maximum(out, 0.0)

    def to_json_dict(self) -> dict:
        return {
            "format": "agbmap-rh-agb-1",
            "rh_percentile": self.rh_percentile,
            "form": self.form,
            "a": self.a,
            "b": self.b,
            "r2": self.r2,
            "rmse_mg_ha": self.rmse_mg_ha,
            "n_plots": self.n_plots,
            "region_label": self.region_label,
            "excluded_zero_agb": self.excluded_zero_agb,
            "degenerate_r2": self.degenerate_r2,
            "fitted_on": self.fitted_on or date.today().isoformat(),
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1))

    @classmethod
    def from_json_dict(cls, d: dict) -> "RhAgbModel":
        if d.get("format") != "agbmap-rh-agb-1":
            raise ValidationError(f"not a calibration file (format={d.get('format')!r})")
        return cls(
            rh_percentile=int(d["rh_percentile"]), form=d["form"],
            a=d["a"], b=d["b"], r2=d["r2"], rmse_mg_ha=d["rmse_mg_ha"],
            n_plots=int(d["n_plots"]), region_label=d.get("region_label", ""),
            excluded_zero_agb=d.get("excluded_zero_agb", 0),
            degenerate_r2=d.get("degenerate_r2", False),
            fitted_on=d.get("fitted_on", ""),
        )

    @classmethod
    def load(cls, path) -> "RhAgbModel":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def fit_rh_agb(pairs, percentile: int, form: str = FORM_POWER,
               region_label: str = "") -> RhAgbModel:
    """Fit the RH-to-AGB curve on (rh_m, agb_mg_ha) pairs."""
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValidationError("pairs must be a sequence of (rh_m, agb_mg_ha)")
    rh, agb = arr[:, 0], arr[:, 1]
    if rh.size < 3:
        raise FitError(f"need at least 3 pairs, got {rh.size}")
    excluded = 0

    if form == FORM_POWER:
        if np.any(rh <= 0):
            raise ValueError("power form requires rh_m > 0")
        keep = agb > 0
        excluded = int(np.count_nonzero(~keep))
        if excluded == rh.size:
            raise FitError("all AGB values are zero; cannot fit the power form")
        if rh.size - excluded < 3:
            raise FitError("fewer than 3 pairs with AGB > 0 for the log fit")
        ln_a, b = _ols_line(np.log(rh[keep]), np.log(agb[keep]))
        a = math.exp(ln_a)
    elif form == FORM_LINEAR:
        a, b = _ols_line(rh, agb)
    else:
        raise ValidationError(f"unknown calibration form: {form!r}")

    model = RhAgbModel(
        rh_percentile=percentile, form=form, a=a, b=b,
        r2=0.0, rmse_mg_ha=0.0, n_plots=int(rh.size),
        region_label=region_label, excluded_zero_agb=excluded,
    )
    pred = model.predict(rh)
    resid = agb - pred
    sse = float(np.dot(resid, resid))
    model.rmse_mg_ha = math.sqrt(sse / rh.size)
    dev = agb - agb.mean()
    sst = float(np.dot(dev, dev))
    if sst == 0.0:
        model.degenerate_r2 = True
    else:
        model.r2 = 1.0 - sse / sst
    return model


def _ols_line(x, y):
    n = x.size
    xm, ym = x.mean(), y.mean()
    sxx = float(np.dot(x - xm, x - xm))
    if sxx == 0.0:
        raise FitError("regressor has zero variance")
    b = float(np.dot(x - xm, y - ym)) / sxx
    return ym - b * xm, b


@dataclass
class LabeledSample:
    """A footprint with its biomass label, later joined to stack features."""

    shot_id: str
    lat: float
    lon: float
    agb_mg_ha: float
    features: np.ndarray | None = None
    slope_deg: float | None = None


@dataclass
class LabelResult:
    samples: list
    n_clamped: int  # negative model outputs clamped to zero


def label_footprints(footprints, model: RhAgbModel) -> LabelResult:
    """Evaluate the calibration at each footprint's model percentile."""
    samples = []
    n_clamped = 0
    for rec in footprints:
        rh = rec.rh_height(model.rh_percentile)  # KeyError if absent
        if model.form == FORM_LINEAR:
            raw = model.a + model.b * rh
        else:
            if rh < 0:
                raise ValueError(f"shot {rec.shot_id}: negative RH{model.rh_percentile}")
            raw = model.a * rh ** model.b
        if raw < 0.0:
            n_clamped += 1
            raw = 0.0
        samples.append(LabeledSample(rec.shot_id, rec.lat, rec.lon, raw))
    return LabelResult(samples, n_clamped)


_EARTH_RADIUS_M = 6371008.8


def _haversine_m(lat1, lon1, lat2, lon2):
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * _EARTH_RADIUS_M * math.asin(math.sqrt(h))


def match_plots_to_footprints(plots, footprints, max_distance_m: float = 12.5):
    """Pair each plot with the nearest footprint within max_distance_m.

    Returns a list of (plot, footprint, distance_m); plots without a
    footprint in range are simply absent from it.
    """
    matches = []
    for plot in plots:
        best = None
        for rec in footprints:
            d = _haversine_m(plot.lat, plot.lon, rec.lat, rec.lon)
            if d <= max_distance_m and (best is None or d < best[1]):
                best = (rec, d)
        if best is not None:
            matches.append((plot, best[0], best[1]))
    return matches
