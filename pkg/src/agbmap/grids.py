"""Georeferenced single-band grids and their file formats.

A RasterGrid is a north-up, square-pixel, row-major float32 grid. Two file
formats are supported and round-trip bit-identically:

* single-band float32 GeoTIFF (``.tif``/``.tiff``), geotransform in the
  ModelPixelScale/ModelTiepoint tags, nodata in the GDAL_NODATA tag;
* raw little-endian float32 (``.bin``) with a JSON sidecar of the same stem
  holding ``{origin_x, origin_y, pixel_size, n_rows, n_cols, crs_id, nodata}``.

origin_x/origin_y are the map coordinates of the outer top-left corner of
pixel (0, 0); y decreases down rows.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ValidationError

DEFAULT_NODATA = -9999.0

# Fraction of a pixel two grids may differ by and still count as aligned.
ALIGN_TOL = 1e-6


@dataclass
class GridSpec:
    """Geotransform shared by a set of aligned grids."""

    origin_x: float
    origin_y: float
    pixel_size: float
    n_rows: int
    n_cols: int
    crs_id: str

    def pixel_center(self, row, col):
        x = self.origin_x + (np.asarray(col) + 0.5) * self.pixel_size
        y = self.origin_y - (np.asarray(row) + 0.5) * self.pixel_size
        return x, y

    def index_for(self, x, y):
        """Row/col of the pixel containing a map point (floor convention)."""
        col = np.floor((np.asarray(x) - self.origin_x) / self.pixel_size).astype(np.int64)
        row = np.floor((self.origin_y - np.asarray(y)) / self.pixel_size).astype(np.int64)
        return row, col

    def contains(self, x, y):
        row, col = self.index_for(x, y)
        return (row >= 0) & (row < self.n_rows) & (col >= 0) & (col < self.n_cols)


@dataclass
class RasterGrid:
    """One georeferenced band; values are float32 with a nodata sentinel."""

    origin_x: float
    origin_y: float
    pixel_size: float
    n_rows: int
    n_cols: int
    crs_id: str
    nodata: float
    values: np.ndarray
    semantic: str = ""

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.shape != (self.n_rows, self.n_cols):
            if self.values.size == self.n_rows * self.n_cols:
                self.values = self.values.reshape(self.n_rows, self.n_cols)
            else:
                raise ValidationError(
                    f"values length {self.values.size} != {self.n_rows}x{self.n_cols}"
                )
        if not self.pixel_size > 0:
            raise ValidationError("pixel_size must be > 0")

    @property
    def spec(self) -> GridSpec:
        return GridSpec(
            self.origin_x, self.origin_y, self.pixel_size,
            self.n_rows, self.n_cols, self.crs_id,
        )

    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.values) & (self.values != np.float32(self.nodata))

    def like(self, values, semantic="") -> "RasterGrid":
        """New grid on this geotransform holding ``values``."""
        return RasterGrid(
            self.origin_x, self.origin_y, self.pixel_size,
            self.n_rows, self.n_cols, self.crs_id, self.nodata,
            values, semantic or self.semantic,
        )

    def equals(self, other: "RasterGrid") -> bool:
        return (
            grids_aligned(self, other)
            and self.crs_id == other.crs_id
            and self.nodata == other.nodata
            and np.array_equal(self.values, other.values)
        )


def grids_aligned(a, b) -> bool:
    """Same geotransform within ALIGN_TOL of a pixel; shapes equal."""
    tol = ALIGN_TOL * a.pixel_size
    return (
        a.n_rows == b.n_rows
        and a.n_cols == b.n_cols
        and math.isclose(a.pixel_size, b.pixel_size, rel_tol=0, abs_tol=tol)
        and math.isclose(a.origin_x, b.origin_x, rel_tol=0, abs_tol=tol)
        and math.isclose(a.origin_y, b.origin_y, rel_tol=0, abs_tol=tol)
    )


def require_aligned(a, b, name="grid"):
    if not grids_aligned(a, b):
        raise AlignmentError(f"misaligned: {name}")


# --- GeoTIFF ---------------------------------------------------------------

_TAG_PIXEL_SCALE = 33550
_TAG_TIEPOINT = 33922
_TAG_GEO_KEYS = 34735
_TAG_GDAL_NODATA = 42113

_KEY_MODEL_TYPE = 1024
_KEY_RASTER_TYPE = 1025
_KEY_GEOGRAPHIC_CS = 2048
_KEY_PROJECTED_CS = 3072


def _geo_keys_for(crs_id: str):
    crs = crs_id.upper()
    if crs == "EPSG:4326":
        keys = [(_KEY_MODEL_TYPE, 2), (_KEY_RASTER_TYPE, 1), (_KEY_GEOGRAPHIC_CS, 4326)]
    else:
        code = 32767  # user-defined; crs_id survives in the description JSON
        if crs.startswith("EPSG:"):
            try:
                code = int(crs[5:])
            except ValueError:
                pass
        keys = [(_KEY_MODEL_TYPE, 1), (_KEY_RASTER_TYPE, 1), (_KEY_PROJECTED_CS, code)]
    flat = [1, 1, 0, len(keys)]
    for key_id, value in keys:
        flat.extend([key_id, 0, 1, value])
    return tuple(flat)


def _write_geotiff(grid: RasterGrid, path: Path):
    import tifffile

    desc = json.dumps({"crs_id": grid.crs_id, "semantic": grid.semantic})
    nodata_s = repr(float(grid.nodata))
    extratags = [
        (_TAG_PIXEL_SCALE, "d", 3, (grid.pixel_size, grid.pixel_size, 0.0)),
        (_TAG_TIEPOINT, "d", 6, (0.0, 0.0, 0.0, grid.origin_x, grid.origin_y, 0.0)),
        (_TAG_GEO_KEYS, "H", None, _geo_keys_for(grid.crs_id)),
        (_TAG_GDAL_NODATA, "s", 0, nodata_s),
    ]
    tifffile.imwrite(
        path, grid.values, description=desc, metadata=None, extratags=extratags
    )


def _read_geotiff(path: Path) -> RasterGrid:
    import tifffile

    with tifffile.TiffFile(path) as tf:
        if len(tf.pages) != 1:
            raise ValidationError(f"{path}: expected a single-band GeoTIFF")
        page = tf.pages[0]
        values = page.asarray()
        if values.ndim != 2:
            raise ValidationError(f"{path}: multi-band input, split bands upstream")
        scale = page.tags.get(_TAG_PIXEL_SCALE)
        tie = page.tags.get(_TAG_TIEPOINT)
        if scale is None or tie is None:
            raise ValidationError(f"{path}: missing georeferencing tags")
        px = float(scale.value[0])
        origin_x, origin_y = float(tie.value[3]), float(tie.value[4])
        nodata_tag = page.tags.get(_TAG_GDAL_NODATA)
        nodata = float(nodata_tag.value) if nodata_tag is not None else DEFAULT_NODATA
        crs_id, semantic = "", ""
        desc = page.tags.get(270)
        if desc is not None:
            try:
                meta = json.loads(desc.value)
                crs_id = meta.get("crs_id", "")
                semantic = meta.get("semantic", "")
            except (json.JSONDecodeError, AttributeError, TypeError):
                pass
        if not crs_id:
            crs_id = _crs_from_geo_keys(page.tags.get(_TAG_GEO_KEYS))
    values = np.asarray(values, dtype=np.float32)
    bad = ~np.isfinite(values)
    if bad.any():
        values = values.copy()
        values[bad] = np.float32(nodata)
    return RasterGrid(
        origin_x, origin_y, px, values.shape[0], values.shape[1],
        crs_id, nodata, values, semantic,
    )


def _crs_from_geo_keys(tag) -> str:
    if tag is None:
        return ""
    flat = list(tag.value)
    entries = flat[4:]
    keys = {entries[i]: entries[i + 3] for i in range(0, len(entries) - 3, 4)}
    if keys.get(_KEY_GEOGRAPHIC_CS):
        return f"EPSG:{keys[_KEY_GEOGRAPHIC_CS]}"
    code = keys.get(_KEY_PROJECTED_CS, 0)
    if code and code != 32767:
        return f"EPSG:{code}"
    return ""


# --- raw float32 + JSON sidecar --------------------------------------------

def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def _write_raw(grid: RasterGrid, path: Path):
    header = {
        "origin_x": grid.origin_x,
        "origin_y": grid.origin_y,
        "pixel_size": grid.pixel_size,
        "n_rows": grid.n_rows,
        "n_cols": grid.n_cols,
        "crs_id": grid.crs_id,
        "nodata": float(grid.nodata),
        "semantic": grid.semantic,
    }
    path.write_bytes(grid.values.astype("<f4").tobytes(order="C"))
    _sidecar_path(path).write_text(json.dumps(header, indent=1))


def _read_raw(path: Path) -> RasterGrid:
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise ValidationError(f"{path}: missing JSON sidecar {sidecar.name}")
    header = json.loads(sidecar.read_text())
    try:
        n_rows, n_cols = int(header["n_rows"]), int(header["n_cols"])
        values = np.frombuffer(path.read_bytes(), dtype="<f4")
        grid = RasterGrid(
            float(header["origin_x"]), float(header["origin_y"]),
            float(header["pixel_size"]), n_rows, n_cols,
            str(header["crs_id"]), float(header["nodata"]),
            values.reshape(n_rows, n_cols).copy(),
            str(header.get("semantic", "")),
        )
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path}: bad sidecar or payload ({exc})") from exc
    return grid


# --- public entry points ----------------------------------------------------

def load_raster(path) -> RasterGrid:
    """Read a grid from GeoTIFF or raw+sidecar, by file extension."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"raster not found: {path}")
    suffix = path.suffix.lower()
    if suffix in (".tif", ".tiff"):
        return _read_geotiff(path)
    if suffix in (".bin", ".raw"):
        return _read_raw(path)
    raise ValidationError(f"{path}: unsupported raster extension '{suffix}'")


def write_raster(grid: RasterGrid, path):
    """Write a grid; format chosen by extension. Round-trips bit-identically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    suffix = path.suffix.lower()
    if suffix in (".tif", ".tiff"):
        _write_geotiff(grid, path)
    elif suffix in (".bin", ".raw"):
        _write_raw(grid, path)
    else:
        raise ValidationError(f"{path}: unsupported raster extension '{suffix}'")
