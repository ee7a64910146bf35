"""Coordinate transforms for the supported grid CRSs.

Inputs are expected pre-projected onto one common grid, so only two CRS
families are registered: geographic WGS84 (``EPSG:4326``) and WGS84 UTM
zones (``EPSG:326xx`` north / ``EPSG:327xx`` south). UTM uses the Krüger
series to fourth order in the third flattening, good to well under a
millimetre inside a zone. Anything else raises ValidationError.
"""
from __future__ import annotations

import re

import numpy as np

from .errors import ValidationError

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563

_E2 = WGS84_F * (2.0 - WGS84_F)
_E = np.sqrt(_E2)
_N = WGS84_F / (2.0 - WGS84_F)

# Rectifying radius and the forward/reverse series coefficients in n.
_A_RECT = (WGS84_A / (1.0 + _N)) * (1.0 + _N**2 / 4.0 + _N**4 / 64.0)
_ALPHA = (
    _N / 2.0 - 2.0 * _N**2 / 3.0 + 5.0 * _N**3 / 16.0 + 41.0 * _N**4 / 180.0,
    13.0 * _N**2 / 48.0 - 3.0 * _N**3 / 5.0 + 557.0 * _N**4 / 1440.0,
    61.0 * _N**3 / 240.0 - 103.0 * _N**4 / 140.0,
    49561.0 * _N**4 / 161280.0,
)
_BETA = (
    _N / 2.0 - 2.0 * _N**2 / 3.0 + 37.0 * _N**3 / 96.0 - _N**4 / 360.0,
    _N**2 / 48.0 + _N**3 / 15.0 - 437.0 * _N**4 / 1440.0,
    17.0 * _N**3 / 480.0 - 37.0 * _N**4 / 840.0,
    4397.0 * _N**4 / 161280.0,
)

_UTM_K0 = 0.9996
_UTM_FALSE_EASTING = 500000.0
_UTM_FALSE_NORTHING_SOUTH = 10000000.0

_UTM_RE = re.compile(r"^EPSG:32([67])(\d{2})$")


def _parse_utm(crs_id: str):
    m = _UTM_RE.match(crs_id.upper().strip())
    if not m:
        return None
    hemisphere, zone = m.group(1), int(m.group(2))
    if not 1 <= zone <= 60:
        return None
    lon0 = 6.0 * zone - 183.0
    false_northing = 0.0 if hemisphere == "6" else _UTM_FALSE_NORTHING_SOUTH
    return lon0, false_northing


def is_geographic(crs_id: str) -> bool:
    return crs_id.upper().strip() == "EPSG:4326"


def is_supported(crs_id: str) -> bool:
    return is_geographic(crs_id) or _parse_utm(crs_id) is not None


def _tm_forward(lat_deg, lon_deg, lon0_deg):
    phi = np.radians(np.asarray(lat_deg, dtype=np.float64))
    lam = np.radians(np.asarray(lon_deg, dtype=np.float64) - lon0_deg)
    sigma = np.sinh(_E * np.arctanh(_E * np.sin(phi)))
    tau = np.tan(phi)
    tau_p = tau * np.sqrt(1.0 + sigma**2) - sigma * np.sqrt(1.0 + tau**2)
    xi_p = np.arctan2(tau_p, np.cos(lam))
    eta_p = np.arcsinh(np.sin(lam) / np.sqrt(tau_p**2 + np.cos(lam) ** 2))
    xi, eta = xi_p.copy(), eta_p.copy()
    for j, alpha in enumerate(_ALPHA, start=1):
        xi += alpha * np.sin(2 * j * xi_p) * np.cosh(2 * j * eta_p)
        eta += alpha * np.cos(2 * j * xi_p) * np.sinh(2 * j * eta_p)
    return _A_RECT * eta, _A_RECT * xi


def _tm_inverse(x, y):
    eta = np.asarray(x, dtype=np.float64) / _A_RECT
    xi = np.asarray(y, dtype=np.float64) / _A_RECT
    xi_p, eta_p = xi.copy(), eta.copy()
    for j, beta in enumerate(_BETA, start=1):
        xi_p -= beta * np.sin(2 * j * xi) * np.cosh(2 * j * eta)
        eta_p -= beta * np.cos(2 * j * xi) * np.sinh(2 * j * eta)
    tau_p = np.sin(xi_p) / np.sqrt(np.sinh(eta_p) ** 2 + np.cos(xi_p) ** 2)
    lam = np.arctan2(np.sinh(eta_p), np.cos(xi_p))
    # Invert tau'(tau) by Newton; the first guess is exact for a sphere.
    tau = tau_p / (1.0 - _E2)
    for _ in range(8):
        sin_phi = tau / np.sqrt(1.0 + tau**2)
        sigma = np.sinh(_E * np.arctanh(_E * sin_phi))
        f_tau = tau * np.sqrt(1.0 + sigma**2) - sigma * np.sqrt(1.0 + tau**2)
        d_tau = (
            (np.sqrt((1.0 + sigma**2) * (1.0 + tau**2)) - sigma * tau)
            * (1.0 - _E2)
            * np.sqrt(1.0 + tau**2)
            / (1.0 + (1.0 - _E2) * tau**2)
        )
        step = (tau_p - f_tau) / d_tau
        tau = tau + step
        if np.all(np.abs(step) <= 1e-14 * np.maximum(1.0, np.abs(tau))):
            break
    return np.degrees(np.arctan(tau)), np.degrees(lam)


def geo_to_map(crs_id: str, lat, lon):
    """(lat, lon) degrees -> map (x, y) in the CRS units."""
    if is_geographic(crs_id):
        return np.asarray(lon, dtype=np.float64), np.asarray(lat, dtype=np.float64)
    utm = _parse_utm(crs_id)
    if utm is None:
        raise ValidationError(f"unknown CRS id: {crs_id!r}")
    lon0, false_northing = utm
    x, y = _tm_forward(lat, lon, lon0)
    return (
        _UTM_FALSE_EASTING + _UTM_K0 * x,
        false_northing + _UTM_K0 * y,
    )


def map_to_geo(crs_id: str, x, y):
    """Map (x, y) -> (lat, lon) degrees."""
    if is_geographic(crs_id):
        return np.asarray(y, dtype=np.float64), np.asarray(x, dtype=np.float64)
    utm = _parse_utm(crs_id)
    if utm is None:
        raise ValidationError(f"unknown CRS id: {crs_id!r}")
    lon0, false_northing = utm
    lat, dlon = _tm_inverse(
        (np.asarray(x, dtype=np.float64) - _UTM_FALSE_EASTING) / _UTM_K0,
        (np.asarray(y, dtype=np.float64) - false_northing) / _UTM_K0,
    )
    return lat, dlon + lon0
