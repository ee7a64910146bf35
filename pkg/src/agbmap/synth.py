"""Seeded synthetic worlds: rasters, footprints, and field plots.

Real archives cannot ship with the tests, so this generator builds a world
whose every quantity follows the pipeline's own physics: a smooth biomass
field drives canopy height through a power law, height drives backscatter
through saturating curves, optical reflectance tracks biomass linearly, and
footprints sample the truth with controlled noise. Defects are planted with
bookkeeping: footprints that should fail the flag screen and footprints
whose height profile was shifted so their backscatter residual lands about
+-6 dB off the curve (the synthetic analogue of a geolocation error).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from . import crs as crs_mod
from .calibration import tree_agb
from .errors import ValidationError
from .grids import RasterGrid, write_raster
from .ingest import FootprintRecord, PlotMeasurement, TreeRecord, write_footprints, write_plots

RH_PERCENTILES = (30, 40, 50, 60, 70, 80, 90, 95, 98)

#: gamma = a - b*exp(-c*rh98), per polarization (dB)
TRUTH_CURVES = {
    "HV": (-12.0, 14.0, 0.07),
    "HH": (-7.0, 9.0, 0.05),
    "VH": (-15.0, 10.0, 0.09),
    "VV": (-9.0, 7.0, 0.06),
}

#: mean reflectance at zero biomass and its change over the biomass range
OPTICAL_BANDS = {
    "B1": (0.08, -0.010), "B2": (0.060, -0.020), "B3": (0.080, -0.020),
    "B4": (0.070, -0.045), "B5": (0.120, 0.020), "B6": (0.200, 0.100),
    "B7": (0.250, 0.120), "B8": (0.280, 0.170), "B8A": (0.300, 0.170),
    "B9": (0.300, 0.050), "B11": (0.200, -0.080), "B12": (0.120, -0.070),
}

TRUTH_CAL_A = 3.0
TRUTH_CAL_B = 1.25


@dataclass
class SynthSpec:
    n_rows: int = 512
    n_cols: int = 512
    pixel_size: float = 25.0
    crs_id: str = "EPSG:32650"
    origin_x: float = 300000.0
    origin_y: float = 4600000.0
    nodata: float = -9999.0
    n_footprints: int = 30000
    n_plots: int = 12
    agb_max: float = 350.0
    relief_m: float = 900.0
    correlation_px: float = 40.0
    gamma_noise_db: float = 1.0     # uniform half-width of backscatter noise
    rh_noise_m: float = 0.4
    optical_noise: float = 0.015
    outlier_fraction: float = 0.0
    outlier_offset_db: float = 6.0
    quality_fail_fraction: float = 0.0  # per failure mode
    n_dates: int = 3
    seed: int = 0

    def validate(self):
        if self.n_rows < 8 or self.n_cols < 8:
            raise ValidationError("world grid must be at least 8x8")
        if self.n_footprints > self.n_rows * self.n_cols:
            raise ValidationError("more footprints than pixels")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ValidationError("outlier_fraction must be in [0, 1)")


@dataclass
class World:
    spec: SynthSpec
    truth_agb: RasterGrid
    truth_calibration: tuple          # (a, b) of AGB = a * RH98**b
    truth_curves: dict
    stack_inputs: dict                # feed to stack.build_canonical_layers
    mask_inputs: tuple                # (cover2000, loss_year, gain)
    footprints: list
    gamma_samples: list               # per footprint {pol: dB at its pixel}
    outlier_ids: set
    quality_fail_ids: set
    plots: list

    def write(self, out_dir) -> dict:
        return _write_world(self, Path(out_dir))


def _smooth_field(rng, n_rows, n_cols, correlation_px):
    """Smooth random field in [0, 1] via spectral low-pass of white noise."""
    white = rng.standard_normal((n_rows, n_cols))
    fy = np.fft.fftfreq(n_rows)[:, None]
    fx = np.fft.rfftfreq(n_cols)[None, :]
    # Gaussian kernel of width correlation_px, applied in the frequency domain
    h = np.exp(-2.0 * math.pi**2 * correlation_px**2 * (fy**2 + fx**2))
    smooth = np.fft.irfft2(np.fft.rfft2(white) * h, s=(n_rows, n_cols))
    lo, hi = smooth.min(), smooth.max()
    return (smooth - lo) / (hi - lo)


def _curve(pol, rh):
    a, b, c = TRUTH_CURVES[pol]
    return a - b * np.exp(-c * np.asarray(rh, dtype=np.float64))


def _curve_inverse(pol, gamma):
    a, b, c = TRUTH_CURVES[pol]
    arg = (a - gamma) / b
    if arg <= 0 or arg > 1:
        return None
    return -math.log(arg) / c


def make_synthetic_world(spec: SynthSpec | None = None, seed: int | None = None) -> World:
    """Build a fully seeded world; identical spec+seed gives identical output."""
    spec = spec or SynthSpec()
    if seed is not None:
        spec = SynthSpec(**{**spec.__dict__, "seed": seed})
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    nr, nc = spec.n_rows, spec.n_cols

    def grid(values, semantic):
        return RasterGrid(spec.origin_x, spec.origin_y, spec.pixel_size,
                          nr, nc, spec.crs_id, spec.nodata,
                          np.asarray(values, dtype=np.float32), semantic)

    # Truth fields
    agb = spec.agb_max * _smooth_field(rng, nr, nc, spec.correlation_px) ** 1.2
    rh98 = (agb / TRUTH_CAL_A) ** (1.0 / TRUTH_CAL_B)
    dem = 200.0 + spec.relief_m * _smooth_field(rng, nr, nc, spec.correlation_px * 0.8)
    truth_agb = grid(agb, "AGB_TRUTH")

    # SAR inputs: S1 per-date dB grids, P2 digital-number mosaics
    def noisy_gamma(pol):
        return _curve(pol, rh98) + rng.uniform(-spec.gamma_noise_db,
                                               spec.gamma_noise_db, (nr, nc))

    stack_inputs = {
        "s1_vv_db": [grid(noisy_gamma("VV"), f"S1_VV_d{d}") for d in range(spec.n_dates)],
        "s1_vh_db": [grid(noisy_gamma("VH"), f"S1_VH_d{d}") for d in range(spec.n_dates)],
        "p2_hh_dn": grid(10.0 ** ((noisy_gamma("HH") + 83.0) / 20.0), "P2_HH_DN"),
        "p2_hv_dn": grid(10.0 ** ((noisy_gamma("HV") + 83.0) / 20.0), "P2_HV_DN"),
        "dem": grid(dem, "DEM"),
    }

    # Optical: band means plus per-date NIR/Red pairs for the NDVI stats
    rel_agb = agb / spec.agb_max
    s2 = {}
    for band, (base, gain) in OPTICAL_BANDS.items():
        refl = base + gain * rel_agb + rng.normal(0.0, spec.optical_noise, (nr, nc))
        s2[band] = grid(np.clip(refl, 0.001, None), f"S2_{band}")
    stack_inputs["s2"] = s2
    ndvi_dates = []
    for d in range(spec.n_dates):
        season = 1.0 + 0.12 * math.sin(2.0 * math.pi * d / max(spec.n_dates, 1))
        nir = (0.28 + 0.17 * rel_agb) * season \
            + rng.normal(0.0, spec.optical_noise, (nr, nc))
        red = (0.07 - 0.045 * rel_agb) / season \
            + rng.normal(0.0, spec.optical_noise, (nr, nc))
        ndvi_dates.append((grid(np.clip(nir, 0.001, None), f"NIR_d{d}"),
                           grid(np.clip(red, 0.001, None), f"RED_d{d}")))
    stack_inputs["ndvi_dates"] = ndvi_dates

    # Forest-mask ingredients
    forest = agb > 12.0
    cover = np.where(forest, 75.0 + 20.0 * rel_agb, 3.0 + 4.0 * rel_agb)
    loss = np.zeros((nr, nc), dtype=np.float64)
    gain = np.zeros((nr, nc), dtype=np.float64)
    for _ in range(6):
        r0, c0 = rng.integers(0, nr - 8), rng.integers(0, nc - 8)
        h, w = rng.integers(4, max(5, nr // 8)), rng.integers(4, max(5, nc // 8))
        loss[r0:r0 + h, c0:c0 + w] = float(rng.integers(2001, 2022))
    for _ in range(3):
        r0, c0 = rng.integers(0, nr - 6), rng.integers(0, nc - 6)
        h, w = rng.integers(3, max(4, nr // 10)), rng.integers(3, max(4, nc // 10))
        gain[r0:r0 + h, c0:c0 + w] = 1.0
    mask_inputs = (grid(cover, "COVER2000"), grid(loss, "LOSS_YEAR"),
                   grid(gain, "GAIN"))

    # Footprints on distinct pixels
    flat = rng.choice(nr * nc, size=spec.n_footprints, replace=False)
    rows, cols = np.divmod(flat, nc)
    x = spec.origin_x + (cols + 0.5) * spec.pixel_size
    y = spec.origin_y - (rows + 0.5) * spec.pixel_size
    lat, lon = crs_mod.map_to_geo(spec.crs_id, x, y)
    rh_true = rh98[rows, cols]
    rh_obs = np.maximum(rh_true + rng.normal(0.0, spec.rh_noise_m, rh_true.shape), 0.05)

    n = spec.n_footprints
    n_outliers = int(round(spec.outlier_fraction * n))
    outlier_pos = set(rng.choice(n, size=n_outliers, replace=False).tolist()) \
        if n_outliers else set()

    base_time = datetime(2021, 6, 1, 2, 0, 0)
    footprints, gamma_samples = [], []
    outlier_ids, quality_fail_ids = set(), set()
    fail_modes = ("quality", "degrade", "sensitivity", "day", "coverage")
    fail_draw = rng.random((n, len(fail_modes)))
    sens_good = 0.981 + 0.018 * rng.random(n)
    sens_bad = 0.90 + 0.079 * rng.random(n)
    outlier_sign = 1

    for i in range(n):
        shot_id = f"shot{i:07d}"
        gammas = {
            pol: float(_curve(pol, rh_true[i])
                       + rng.uniform(-spec.gamma_noise_db, spec.gamma_noise_db))
            for pol in TRUTH_CURVES
        }
        rh98_i = float(rh_obs[i])
        if i in outlier_pos:
            # shift the reported profile so the HV residual lands at +-offset
            target = None
            for sign in (outlier_sign, -outlier_sign):
                target = _curve_inverse(
                    "HV", float(_curve("HV", rh_true[i])) - sign * spec.outlier_offset_db)
                if target is not None and target > 0:
                    break
            outlier_sign = -outlier_sign
            if target is not None and target > 0:
                rh98_i = target
                outlier_ids.add(shot_id)

        fails = fail_draw[i] < spec.quality_fail_fraction
        quality_flag = 0 if fails[0] else 1
        degrade = bool(fails[1])
        sensitivity = float(sens_bad[i] if fails[2] else sens_good[i])
        night = not bool(fails[3])
        power = not bool(fails[4])
        if fails.any():
            quality_fail_ids.add(shot_id)

        # lower percentiles get noisier, so RH98 stays the best-correlated
        heights = []
        for pct in RH_PERCENTILES:
            hp = rh98_i * (pct / 98.0) ** 0.8
            if pct != 98:
                hp += abs(rng.normal(0.0, 0.8)) * (98 - pct) / 98.0
            heights.append(hp)
        heights = np.maximum.accumulate(np.asarray(heights))
        heights[-1] = max(float(heights[-1]), rh98_i)
        rh = tuple((pct, float(h)) for pct, h in zip(RH_PERCENTILES, heights))

        footprints.append(FootprintRecord(
            shot_id=shot_id, lat=float(lat[i]), lon=float(lon[i]),
            beam_id="BEAM0101" if power else "BEAM0010",
            power_beam=power, quality_flag=quality_flag, degrade_flag=degrade,
            sensitivity=sensitivity, night_acquisition=night, rh=rh,
            acquisition_time=base_time + timedelta(seconds=int(i)),
        ))
        gamma_samples.append(gammas)

    plots = _make_plots(spec, rng, footprints, outlier_ids, quality_fail_ids,
                        agb, rows, cols)
    return World(
        spec=spec, truth_agb=truth_agb,
        truth_calibration=(TRUTH_CAL_A, TRUTH_CAL_B), truth_curves=dict(TRUTH_CURVES),
        stack_inputs=stack_inputs, mask_inputs=mask_inputs,
        footprints=footprints, gamma_samples=gamma_samples,
        outlier_ids=outlier_ids, quality_fail_ids=quality_fail_ids, plots=plots,
    )


def _make_plots(spec, rng, footprints, outlier_ids, quality_fail_ids,
                agb, rows, cols):
    """Field plots co-located with clean footprints, trees matching truth AGB."""
    candidates = [
        (i, float(agb[rows[i], cols[i]]))
        for i, rec in enumerate(footprints)
        if rec.shot_id not in outlier_ids and rec.shot_id not in quality_fail_ids
        and agb[rows[i], cols[i]] > 20.0
    ]
    if not candidates:
        return []
    candidates.sort(key=lambda t: t[1])
    n_plots = min(spec.n_plots, len(candidates))
    picks = [candidates[int(q * (len(candidates) - 1))]
             for q in np.linspace(0.05, 0.98, n_plots)]

    plots = []
    area_ha = math.pi * 12.5**2 / 10000.0
    for k, (i, target_density) in enumerate(picks):
        rec = footprints[i]
        target_kg = target_density * area_ha * 1000.0
        trees, acc = [], 0.0
        while acc < target_kg:
            dbh = float(rng.uniform(8.0, 42.0))
            height = max(2.0, 1.1 * dbh**0.75 + float(rng.normal(0.0, 1.0)))
            acc += tree_agb(dbh, height)
            trees.append(TreeRecord(f"plot{k:03d}", dbh, height))
        for _ in range(int(rng.integers(0, 3))):  # saplings below the DBH floor
            trees.append(TreeRecord(f"plot{k:03d}", float(rng.uniform(2.0, 4.9)),
                                    float(rng.uniform(1.5, 4.0))))
        plots.append(PlotMeasurement(f"plot{k:03d}", rec.lat, rec.lon, 25.0, trees))
    return plots


def _write_world(world: World, out_dir: Path) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    raster_dir = out_dir / "rasters"
    raster_dir.mkdir(exist_ok=True)
    inv = {}

    def put(grid, name):
        path = raster_dir / f"{name}.tif"
        write_raster(grid, path)
        return str(path.relative_to(out_dir))

    si = world.stack_inputs
    build_cfg = {
        "s1_vv_db": [put(g, f"s1_vv_d{d}") for d, g in enumerate(si["s1_vv_db"])],
        "s1_vh_db": [put(g, f"s1_vh_d{d}") for d, g in enumerate(si["s1_vh_db"])],
        "p2_hh_dn": put(si["p2_hh_dn"], "p2_hh_dn"),
        "p2_hv_dn": put(si["p2_hv_dn"], "p2_hv_dn"),
        "s2": {band: put(g, f"s2_{band.lower()}") for band, g in si["s2"].items()},
        "ndvi_dates": [
            {"nir": put(nir, f"ndvi_nir_d{d}"), "red": put(red, f"ndvi_red_d{d}")}
            for d, (nir, red) in enumerate(si["ndvi_dates"])
        ],
        "dem": put(si["dem"], "dem"),
    }
    (out_dir / "stack_build.json").write_text(json.dumps(build_cfg, indent=1))

    cover, loss, gain = world.mask_inputs
    inv["cover"] = put(cover, "cover2000")
    inv["loss"] = put(loss, "loss_year")
    inv["gain"] = put(gain, "gain")
    inv["truth_agb"] = put(world.truth_agb, "truth_agb")

    gamma_cols = {
        f"gamma_{pol.lower()}": {
            rec.shot_id: repr(g[pol])
            for rec, g in zip(world.footprints, world.gamma_samples)
        }
        for pol in TRUTH_CURVES
    }
    write_footprints(world.footprints, out_dir / "footprints.csv",
                     extra_columns=gamma_cols)
    write_plots(world.plots, out_dir / "plots.csv", out_dir / "trees.csv")

    meta = {
        "spec": {**world.spec.__dict__},
        "truth_calibration": list(world.truth_calibration),
        "truth_curves": {k: list(v) for k, v in world.truth_curves.items()},
        "outlier_ids": sorted(world.outlier_ids),
        "quality_fail_ids": sorted(world.quality_fail_ids),
        "inventory": inv,
    }
    (out_dir / "world.json").write_text(json.dumps(meta, indent=1))
    return {
        "out_dir": str(out_dir),
        "footprints": str(out_dir / "footprints.csv"),
        "plots": str(out_dir / "plots.csv"),
        "trees": str(out_dir / "trees.csv"),
        "stack_build": str(out_dir / "stack_build.json"),
        "world": str(out_dir / "world.json"),
        "mask_inputs": inv,
    }
