"""The co-registered feature stack and its per-layer preprocessing.

Layer recipes: SAR digital numbers convert to gamma naught via
10*log10(DN^2) - 83 dB; ratios are dB differences; speckle is reduced with a
circular focal mean (radius 50 m); NDVI = (NIR - Red)/(NIR + Red); slope
comes from Horn's 3x3 kernel; latitude/longitude grids hold pixel-center
coordinates. Layers are stacked in a fixed published order so that model
feature indices stay portable across runs and regions.

A forest mask combines a baseline canopy-cover map with loss/gain layers:
forest = (cover >= threshold AND no loss in 2001..2021) OR gain.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import crs as crs_mod
from .errors import AlignmentError, ValidationError
from .grids import GridSpec, RasterGrid, grids_aligned, load_raster, require_aligned

#: fixed stack order; models record it and refuse mismatched stacks
CANONICAL_LAYER_ORDER = (
    "S1_VV", "S1_VH", "S1_VVVH_RATIO",
    "P2_HH", "P2_HV", "P2_HVHH_RATIO",
    "S2_B1", "S2_B2", "S2_B3", "S2_B4", "S2_B5", "S2_B6", "S2_B7",
    "S2_B8", "S2_B8A", "S2_B9", "S2_B11", "S2_B12",
    "NDVI_MEAN", "NDVI_MAX", "DEM", "SLOPE", "LAT", "LON",
)

#: polarization label -> stack layer holding its backscatter
POLARIZATION_LAYERS = {
    "VV": "S1_VV", "VH": "S1_VH", "HH": "P2_HH", "HV": "P2_HV",
}

FOREST_LOSS_FIRST_YEAR = 2001
FOREST_LOSS_LAST_YEAR = 2021
DEFAULT_COVER_THRESHOLD_PCT = 30.0


def dn_to_gamma0(dn, nodata: float = -9999.0):
    """SAR digital numbers to gamma naught in dB; DN <= 0 becomes nodata."""
    arr = np.asarray(dn, dtype=np.float64)
    out = np.full(arr.shape, nodata, dtype=np.float64)
    ok = arr > 0
    out[ok] = 10.0 * np.log10(arr[ok] ** 2) - 83.0
    if out.ndim == 0:
        return float(out)
    return out


def dn_grid_to_gamma0(grid: RasterGrid, semantic="") -> RasterGrid:
    values = np.where(
        grid.valid_mask(),
        dn_to_gamma0(grid.values.astype(np.float64), grid.nodata),
        grid.nodata,
    )
    return grid.like(values.astype(np.float32), semantic)


def disc_offsets(radius_px: float):
    """Integer (drow, dcol) offsets whose centers lie within radius_px."""
    r = int(math.floor(radius_px))
    out = []
    for dr in range(-r, r + 1):
        for dc in range(-r, r + 1):
            if dr * dr + dc * dc <= radius_px * radius_px:
                out.append((dr, dc))
    return out


def focal_mean(grid: RasterGrid, radius_m: float = 50.0) -> RasterGrid:
    """Circular focal mean ignoring nodata; all-nodata neighborhoods stay nodata.

    Border pixels average over the in-bounds part of the disc.
    """
    if radius_m < grid.pixel_size:
        raise ValidationError("radius must be at least one pixel")
    offsets = disc_offsets(radius_m / grid.pixel_size)
    valid = grid.valid_mask()
    vals = np.where(valid, grid.values.astype(np.float64), 0.0)
    total = np.zeros_like(vals)
    count = np.zeros_like(vals)
    n_rows, n_cols = vals.shape
    for dr, dc in offsets:
        src_r = slice(max(0, -dr), min(n_rows, n_rows - dr))
        src_c = slice(max(0, -dc), min(n_cols, n_cols - dc))
        dst_r = slice(max(0, dr), min(n_rows, n_rows + dr))
        dst_c = slice(max(0, dc), min(n_cols, n_cols + dc))
        total[dst_r, dst_c] += vals[src_r, src_c]
        count[dst_r, dst_c] += valid[src_r, src_c]
    out = np.full(vals.shape, grid.nodata, dtype=np.float64)
    ok = count > 0
    out[ok] = total[ok] / count[ok]
    return grid.like(out.astype(np.float32))


def band_ratio_db(a_db: RasterGrid, b_db: RasterGrid, semantic="") -> RasterGrid:
    """Power ratio of two dB bands, i.e. their dB difference."""
    require_aligned(a_db, b_db, b_db.semantic or "band")
    ok = a_db.valid_mask() & b_db.valid_mask()
    out = np.where(ok, a_db.values.astype(np.float64) - b_db.values.astype(np.float64),
                   a_db.nodata)
    return a_db.like(out.astype(np.float32), semantic)


def ndvi(nir: RasterGrid, red: RasterGrid) -> RasterGrid:
    """(NIR - Red)/(NIR + Red); zero denominators and negative inputs -> nodata."""
    require_aligned(nir, red, red.semantic or "red")
    n = nir.values.astype(np.float64)
    r = red.values.astype(np.float64)
    ok = nir.valid_mask() & red.valid_mask() & (n >= 0) & (r >= 0) & (n + r > 0)
    out = np.full(n.shape, nir.nodata, dtype=np.float64)
    out[ok] = (n[ok] - r[ok]) / (n[ok] + r[ok])
    return nir.like(out.astype(np.float32), "NDVI")


def temporal_reduce(grids, reducer: str = "mean") -> RasterGrid:
    """Per-pixel mean or max over a date stack, ignoring nodata."""
    if not grids:
        raise ValidationError("temporal_reduce needs at least one grid")
    first = grids[0]
    for i, g in enumerate(grids[1:], start=1):
        require_aligned(first, g, f"{g.semantic or 'grid'}[{i}]")
    if reducer not in ("mean", "max"):
        raise ValidationError(f"unknown reducer: {reducer!r}")
    stack = np.stack([g.values.astype(np.float64) for g in grids])
    valid = np.stack([g.valid_mask() for g in grids])
    count = valid.sum(axis=0)
    ok = count > 0
    out = np.full(first.values.shape, first.nodata, dtype=np.float64)
    if reducer == "mean":
        stack = np.where(valid, stack, 0.0)
        out[ok] = stack.sum(axis=0)[ok] / count[ok]
    else:
        stack = np.where(valid, stack, -np.inf)
        out[ok] = stack.max(axis=0)[ok]
    return first.like(out.astype(np.float32))


def slope_from_dem(dem: RasterGrid) -> RasterGrid:
    """Terrain slope in degrees from Horn's 3x3 finite differences.

    Borders replicate the edge row/column; any nodata inside the window
    makes the output pixel nodata.
    """
    if dem.n_rows < 3 or dem.n_cols < 3:
        raise ValidationError("DEM must be at least 3x3")
    z = np.pad(dem.values.astype(np.float64), 1, mode="edge")
    valid = np.pad(dem.valid_mask(), 1, mode="edge")

    def win(dr, dc):
        return z[1 + dr:1 + dr + dem.n_rows, 1 + dc:1 + dc + dem.n_cols]

    def win_ok(dr, dc):
        return valid[1 + dr:1 + dr + dem.n_rows, 1 + dc:1 + dc + dem.n_cols]

    px = dem.pixel_size
    gx = (
        (win(-1, 1) + 2.0 * win(0, 1) + win(1, 1))
        - (win(-1, -1) + 2.0 * win(0, -1) + win(1, -1))
    ) / (8.0 * px)
    gy = (
        (win(1, -1) + 2.0 * win(1, 0) + win(1, 1))
        - (win(-1, -1) + 2.0 * win(-1, 0) + win(-1, 1))
    ) / (8.0 * px)
    ok = np.ones(dem.values.shape, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            ok &= win_ok(dr, dc)
    slope = np.degrees(np.arctan(np.hypot(gx, gy)))
    out = np.where(ok, slope, dem.nodata)
    return dem.like(out.astype(np.float32), "SLOPE")


def coordinate_grids(spec: GridSpec):
    """Pixel-center (lat, lon) in degrees as float64 arrays."""
    if not crs_mod.is_supported(spec.crs_id):
        raise ValidationError(f"unknown CRS id: {spec.crs_id!r}")
    cols = np.arange(spec.n_cols, dtype=np.float64)
    rows = np.arange(spec.n_rows, dtype=np.float64)
    x = spec.origin_x + (cols + 0.5) * spec.pixel_size
    y = spec.origin_y - (rows + 0.5) * spec.pixel_size
    xx, yy = np.meshgrid(x, y)
    lat, lon = crs_mod.map_to_geo(spec.crs_id, xx, yy)
    return lat, lon


@dataclass
class FeatureStack:
    """Aligned layers in canonical order plus the shared geotransform."""

    layers: list
    layer_names: list
    grid_spec: GridSpec

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def layer(self, name: str) -> RasterGrid:
        return self.layers[self.layer_names.index(name)]


@dataclass
class ForestMask:
    grid: RasterGrid  # values in {0, 1}
    provenance: str = ""


def assemble_stack(layers, expected_names=CANONICAL_LAYER_ORDER) -> FeatureStack:
    """Validate and order named layers into a stack.

    layers: mapping name -> RasterGrid (any iteration order). The name set
    must equal expected_names exactly and every layer must share the first
    layer's geotransform.
    """
    names = list(layers)
    if len(set(names)) != len(names):
        raise ValidationError("duplicate layer names")
    missing = [n for n in expected_names if n not in layers]
    extra = [n for n in names if n not in expected_names]
    if missing:
        raise ValidationError(f"missing layers: {', '.join(missing)}")
    if extra:
        raise ValidationError(f"unexpected layers: {', '.join(extra)}")
    ordered = [layers[n] for n in expected_names]
    ref = ordered[0]
    for name, grid in zip(expected_names, ordered):
        if not grids_aligned(ref, grid):
            raise AlignmentError(f"misaligned: {name}")
    return FeatureStack(ordered, list(expected_names), ref.spec)


def sample_stack(stack: FeatureStack, lat: float, lon: float):
    """Nearest-pixel feature vector at a geographic point.

    Returns (values, complete): float64 vector with NaN where a layer is
    nodata, and a flag that every layer was valid. Points outside the stack
    extent raise ValueError.
    """
    values, complete, inside = sample_stack_many(stack, [lat], [lon])
    if not inside[0]:
        raise ValueError(f"point ({lat}, {lon}) outside stack extent")
    return values[0], bool(complete[0])


def sample_stack_many(stack: FeatureStack, lats, lons):
    """Vectorized nearest-pixel sampling.

    Returns (matrix, complete, inside): matrix rows are feature vectors with
    NaN for nodata or out-of-extent samples; complete marks rows where every
    layer was valid; inside marks rows whose point falls in the extent.
    """
    spec = stack.grid_spec
    x, y = crs_mod.geo_to_map(spec.crs_id, np.asarray(lats, np.float64),
                              np.asarray(lons, np.float64))
    row, col = spec.index_for(x, y)
    inside = (row >= 0) & (row < spec.n_rows) & (col >= 0) & (col < spec.n_cols)
    r = np.clip(row, 0, spec.n_rows - 1)
    c = np.clip(col, 0, spec.n_cols - 1)
    n = r.size
    out = np.full((n, stack.n_layers), np.nan, dtype=np.float64)
    complete = inside.copy()
    for j, grid in enumerate(stack.layers):
        vals = grid.values[r, c].astype(np.float64)
        ok = grid.valid_mask()[r, c] & inside
        out[ok, j] = vals[ok]
        complete &= ok
    return out, complete, inside


def build_forest_mask(cover2000: RasterGrid, loss_year: RasterGrid,
                      gain: RasterGrid,
                      cover_threshold_pct: float = DEFAULT_COVER_THRESHOLD_PCT,
                      provenance: str = "") -> ForestMask:
    """Baseline-cover forest mask minus loss years, plus gain.

    Nodata in cover counts as non-forest; nodata in loss counts as no loss;
    gain is any positive value.
    """
    require_aligned(cover2000, loss_year, "loss_year")
    require_aligned(cover2000, gain, "gain")
    cover_ok = cover2000.valid_mask() & (cover2000.values >= cover_threshold_pct)
    loss_vals = loss_year.values
    lost = (
        loss_year.valid_mask()
        & (loss_vals >= FOREST_LOSS_FIRST_YEAR)
        & (loss_vals <= FOREST_LOSS_LAST_YEAR)
    )
    gained = gain.valid_mask() & (gain.values > 0)
    mask = ((cover_ok & ~lost) | gained).astype(np.float32)
    grid = cover2000.like(mask, "FOREST_MASK")
    grid.nodata = -1.0  # mask itself has no gaps; keep 0/1 clear of the sentinel
    return ForestMask(grid, provenance)


def apply_mask(agb_map: RasterGrid, mask: ForestMask) -> RasterGrid:
    """Biomass where the mask is 1, nodata elsewhere."""
    require_aligned(agb_map, mask.grid, "mask")
    out = np.where(mask.grid.values == 1, agb_map.values,
                   np.float32(agb_map.nodata))
    return agb_map.like(out)


def build_canonical_layers(inputs: dict) -> dict:
    """Run the per-layer recipes over raw inputs.

    inputs keys (grids or lists of grids):
      s1_vv_db, s1_vh_db: per-date dB grids (lists);
      p2_hh_dn, p2_hv_dn: annual-mosaic digital-number grids;
      s2: {band name ("B1".."B12"): mean-reflectance grid};
      ndvi_dates: [(nir_grid, red_grid), ...];
      dem: elevation grid.
    Returns {layer name: grid} in no particular order; feed assemble_stack.
    """
    layers = {}
    s1_vv = focal_mean(temporal_reduce(inputs["s1_vv_db"], "mean"))
    s1_vh = focal_mean(temporal_reduce(inputs["s1_vh_db"], "mean"))
    s1_vv.semantic, s1_vh.semantic = "S1_VV", "S1_VH"
    layers["S1_VV"], layers["S1_VH"] = s1_vv, s1_vh
    layers["S1_VVVH_RATIO"] = band_ratio_db(s1_vv, s1_vh, "S1_VVVH_RATIO")

    p2_hh = focal_mean(dn_grid_to_gamma0(inputs["p2_hh_dn"], "P2_HH"))
    p2_hv = focal_mean(dn_grid_to_gamma0(inputs["p2_hv_dn"], "P2_HV"))
    p2_hh.semantic, p2_hv.semantic = "P2_HH", "P2_HV"
    layers["P2_HH"], layers["P2_HV"] = p2_hh, p2_hv
    layers["P2_HVHH_RATIO"] = band_ratio_db(p2_hv, p2_hh, "P2_HVHH_RATIO")

    for band, grid in inputs["s2"].items():
        name = f"S2_{band.upper()}"
        grid.semantic = name
        layers[name] = grid

    ndvi_grids = [ndvi(nir, red) for nir, red in inputs["ndvi_dates"]]
    layers["NDVI_MEAN"] = temporal_reduce(ndvi_grids, "mean")
    layers["NDVI_MAX"] = temporal_reduce(ndvi_grids, "max")
    layers["NDVI_MEAN"].semantic = "NDVI_MEAN"
    layers["NDVI_MAX"].semantic = "NDVI_MAX"

    dem = inputs["dem"]
    dem.semantic = "DEM"
    layers["DEM"] = dem
    layers["SLOPE"] = slope_from_dem(dem)

    lat, lon = coordinate_grids(dem.spec)
    layers["LAT"] = dem.like(lat.astype(np.float32), "LAT")
    layers["LON"] = dem.like(lon.astype(np.float32), "LON")
    return layers


# --- stack manifests ---------------------------------------------------------

def save_stack(stack: FeatureStack, out_dir, manifest_name="stack.json",
               writer=None) -> Path:
    """Write layers as GeoTIFFs plus a manifest listing them in order."""
    from .grids import write_raster

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, grid in zip(stack.layer_names, stack.layers):
        fname = f"{name}.tif"
        (writer or write_raster)(grid, out_dir / fname)
        entries.append({"name": name, "path": fname})
    spec = stack.grid_spec
    manifest = {
        "format": "agbmap-stack-1",
        "layers": entries,
        "grid": {
            "origin_x": spec.origin_x, "origin_y": spec.origin_y,
            "pixel_size": spec.pixel_size, "n_rows": spec.n_rows,
            "n_cols": spec.n_cols, "crs_id": spec.crs_id,
        },
    }
    path = out_dir / manifest_name
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_stack(manifest_path) -> FeatureStack:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ValidationError(f"stack manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "agbmap-stack-1":
        raise ValidationError(f"{manifest_path}: not a stack manifest")
    base = manifest_path.parent
    layers = {}
    for entry in manifest["layers"]:
        layers[entry["name"]] = load_raster(base / entry["path"])
    names = [e["name"] for e in manifest["layers"]]
    return assemble_stack(layers, expected_names=tuple(names))
