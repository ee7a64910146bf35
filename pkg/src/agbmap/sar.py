"""Backscatter-vs-canopy-height consistency screening.

Backscatter rises with canopy height toward an asymptote, so a footprint
whose height is inconsistent with the co-located backscatter (geolocation
error, bad waveform) lands far from the fitted curve. We fit gamma (dB)
against an RH height, then drop footprints outside a +-3 dB band around the
curve, per polarization, requiring every configured polarization to agree.

Two curve families:

* ``saturating_exp``: gamma = a - b*exp(-c*rh), b > 0, c > 0 (default);
* ``log_linear``:     gamma = a + b*ln(rh), also the fallback when the
  nonlinear fit does not converge.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import FitError, ValidationError

FORM_LOG_LINEAR = "log_linear"
FORM_SATURATING_EXP = "saturating_exp"

DEFAULT_TOLERANCE_DB = 3.0

# Nonlinear fit schedule: coarse grid over the rate constant, then
# Gauss-Newton with step halving. Fixed budget keeps the fit deterministic.
_C_GRID = np.geomspace(2e-3, 2.0, 100)
_GN_MAX_ITER = 100
_GN_STEP_TOL = 1e-8


class FitStats(NamedTuple):
    r2: float
    rmse_db: float
    degenerate: bool  # zero-variance targets; r2 reported as 0 by convention


@dataclass
class CurveFit:
    """A fitted backscatter-vs-RH curve with its acceptance band."""

    polarization: str
    form: str
    params: tuple  # (a, b) for log_linear, (a, b, c) for saturating_exp
    r2: float
    rmse_db: float
    tolerance_db: float = DEFAULT_TOLERANCE_DB
    n_points: int = 0
    fallback_from_exp: bool = False
    degenerate_r2: bool = False

    def __post_init__(self):
        if self.tolerance_db <= 0:
            raise ValidationError("tolerance_db must be > 0")
        if self.form == FORM_SATURATING_EXP:
            a, b, c = self.params
            if not (b > 0 and c > 0):
                raise ValidationError("saturating_exp requires b > 0 and c > 0")
        elif self.form != FORM_LOG_LINEAR:
            raise ValidationError(f"unknown curve form: {self.form!r}")

    def predict(self, rh_m):
        rh = np.asarray(rh_m, dtype=np.float64)
        if self.form == FORM_LOG_LINEAR:
            if np.any(rh <= 0):
                raise ValueError("rh_m must be > 0 for the log-linear form")
            a, b = self.params
            return a + b * np.log(rh)
        a, b, c = self.params
        return a - b * np.exp(-c * rh)

    def to_json_dict(self) -> dict:
        return {
            "format": "agbmap-sar-curve-1",
            "polarization": self.polarization,
            "form": self.form,
            "params": [float(p) for p in self.params],
            "r2": self.r2,
            "rmse_db": self.rmse_db,
            "tolerance_db": self.tolerance_db,
            "n_points": self.n_points,
            "fallback_from_exp": self.fallback_from_exp,
            "degenerate_r2": self.degenerate_r2,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1))

    @classmethod
    def from_json_dict(cls, d: dict) -> "CurveFit":
        if d.get("format") != "agbmap-sar-curve-1":
            raise ValidationError(f"not a curve file (format={d.get('format')!r})")
        return cls(
            polarization=d["polarization"],
            form=d["form"],
            params=tuple(d["params"]),
            r2=d["r2"],
            rmse_db=d["rmse_db"],
            tolerance_db=d.get("tolerance_db", DEFAULT_TOLERANCE_DB),
            n_points=d.get("n_points", 0),
            fallback_from_exp=d.get("fallback_from_exp", False),
            degenerate_r2=d.get("degenerate_r2", False),
        )

    @classmethod
    def load(cls, path) -> "CurveFit":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def _as_pair_arrays(pairs):
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValidationError("pairs must be a sequence of (rh_m, gamma_db)")
    return arr[:, 0], arr[:, 1]


def _ols(x, y):
    """Least-squares line y = a + b*x; b = 0 when x has no variance."""
    n = x.size
    xm, ym = x.mean(), y.mean()
    sxx = float(np.dot(x - xm, x - xm))
    if sxx == 0.0:
        return ym, 0.0
    b = float(np.dot(x - xm, y - ym)) / sxx
    return ym - b * xm, b


def _solve_ab_given_c(rh, gamma, c):
    """Linear subproblem of the saturating fit: basis [1, -exp(-c*rh)]."""
    u = -np.exp(-c * rh)
    um, gm = u.mean(), gamma.mean()
    suu = float(np.dot(u - um, u - um))
    if suu == 0.0:
        return None
    b = float(np.dot(u - um, gamma - gm)) / suu
    a = gm - b * um
    return a, b


def _sse_exp(rh, gamma, a, b, c):
    r = gamma - (a - b * np.exp(-c * rh))
    return float(np.dot(r, r))


def _fit_saturating_exp(rh, gamma):
    """Grid over c, then Gauss-Newton. Returns (a, b, c) or None."""
    best = None
    for c in _C_GRID:
        ab = _solve_ab_given_c(rh, gamma, c)
        if ab is None or ab[1] <= 0:
            continue
        sse = _sse_exp(rh, gamma, ab[0], ab[1], c)
        if best is None or sse < best[0]:
            best = (sse, ab[0], ab[1], c)
    if best is None:
        return None

    sse, a, b, c = best
    converged = False
    for _ in range(_GN_MAX_ITER):
        e = np.exp(-c * rh)
        r = gamma - (a - b * e)
        # Jacobian of the model wrt (a, b, c)
        jac = np.column_stack([np.ones_like(rh), -e, b * rh * e])
        jtj = jac.T @ jac
        jtr = jac.T @ r
        try:
            delta = np.linalg.solve(jtj, jtr)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(delta)):
            return None
        # Halve the step until the objective stops getting worse.
        scale = 1.0
        improved = False
        for _ in range(20):
            na, nb, nc = a + scale * delta[0], b + scale * delta[1], c + scale * delta[2]
            if nb > 0 and nc > 0:
                nsse = _sse_exp(rh, gamma, na, nb, nc)
                if nsse <= sse:
                    a, b, c, sse = na, nb, nc, nsse
                    improved = True
                    break
            scale *= 0.5
        if not improved:
            return None
        if float(np.max(np.abs(scale * delta))) < _GN_STEP_TOL:
            converged = True
            break
    if not converged:
        return None
    return a, b, c


def fit_rh_backscatter(
    pairs,
    form: str = FORM_SATURATING_EXP,
    polarization: str = "",
    tolerance_db: float = DEFAULT_TOLERANCE_DB,
) -> CurveFit:
    """Least-squares fit of gamma (dB) against RH height (m)."""
    rh, gamma = _as_pair_arrays(pairs)
    if rh.size < 10:
        raise FitError(f"need at least 10 pairs, got {rh.size}")
    fallback = False

    if form == FORM_SATURATING_EXP:
        params = _fit_saturating_exp(rh, gamma)
        if params is None:
            form = FORM_LOG_LINEAR
            fallback = True
    if form == FORM_LOG_LINEAR:
        if np.any(rh <= 0):
            raise FitError("log-linear form requires rh_m > 0")
        a, b = _ols(np.log(rh), gamma)
        params = (a, b)
    elif form != FORM_SATURATING_EXP:
        raise ValidationError(f"unknown curve form: {form!r}")

    fit = CurveFit(
        polarization=polarization,
        form=form,
        params=params,
        r2=0.0,
        rmse_db=0.0,
        tolerance_db=tolerance_db,
        n_points=int(rh.size),
        fallback_from_exp=fallback,
    )
    stats = fit_statistics(pairs, fit)
    fit.r2, fit.rmse_db, fit.degenerate_r2 = stats.r2, stats.rmse_db, stats.degenerate
    return fit


def fit_statistics(pairs, fit: CurveFit) -> FitStats:
    """R2 and RMSE of observed gamma about the fitted curve.

    R2 = 1 - sum((g_i - f(rh_i))^2) / sum((g_i - mean(g))^2); zero variance
    in the observations makes R2 undefined and it is reported as 0 with the
    degenerate flag set.
    """
    rh, gamma = _as_pair_arrays(pairs)
    resid = gamma - fit.predict(rh)
    sse = float(np.dot(resid, resid))
    rmse = math.sqrt(sse / rh.size)
    dev = gamma - gamma.mean()
    sst = float(np.dot(dev, dev))
    if sst == 0.0:
        return FitStats(0.0, rmse, True)
    return FitStats(1.0 - sse / sst, rmse, False)


def residual_db(fit: CurveFit, rh_m, gamma_db):
    """Observed minus fitted backscatter, in dB."""
    return np.asarray(gamma_db, dtype=np.float64) - fit.predict(rh_m)


def filter_by_band(footprints, samples, fits, rh_percentile: int):
    """Keep footprints whose residual lies inside every fit's band.

    samples is a sequence parallel to footprints; each element maps a
    polarization label to the backscatter (dB) observed at that footprint.
    Returns (retained, rejected) where rejected pairs each record with its
    reasons. A missing polarization sample rejects the footprint.
    """
    if len(samples) != len(footprints):
        raise ValidationError("samples must be parallel to footprints")
    retained, rejected = [], []
    for record, gammas in zip(footprints, samples):
        reasons = []
        if not record.has_rh(rh_percentile):
            reasons.append(f"missing RH{rh_percentile}")
        else:
            rh = record.rh_height(rh_percentile)
            for fit in fits:
                gamma = gammas.get(fit.polarization)
                if gamma is None or not math.isfinite(gamma):
                    reasons.append(f"missing covariate: {fit.polarization}")
                    continue
                try:
                    res = float(residual_db(fit, rh, gamma))
                except ValueError:
                    reasons.append(f"{fit.polarization}: RH out of curve domain")
                    continue
                if abs(res) > fit.tolerance_db:
                    reasons.append(
                        f"{fit.polarization} residual {res:+.2f} dB outside "
                        f"{fit.tolerance_db:.2f} dB band"
                    )
        if reasons:
            rejected.append((record, reasons))
        else:
            retained.append(record)
    return retained, rejected
