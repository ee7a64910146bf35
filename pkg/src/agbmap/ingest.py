"""Footprint and field-plot ingestion.

Footprints arrive as delimited text exported upstream from the lidar archive
(one row per laser shot, RH percentile heights in ``rh30``-style columns).
Loading is strict per row and forgiving per file: a malformed row is recorded
with a reason and skipped, everything else loads. Order is preserved.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
import re

from .errors import ValidationError

RH_COLUMN_RE = re.compile(r"^rh(\d{1,3})$", re.IGNORECASE)

#: canonical footprint column names; a column_map renames file columns onto these
FOOTPRINT_FIELDS = (
    "shot_id", "lat", "lon", "beam_id", "power_beam", "quality_flag",
    "degrade_flag", "sensitivity", "night_acquisition",
)

_TRUE_WORDS = {"1", "true", "t", "yes", "y"}
_FALSE_WORDS = {"0", "false", "f", "no", "n"}


@dataclass
class FootprintRecord:
    """One lidar shot with its quality flags and RH percentile heights."""

    shot_id: str
    lat: float
    lon: float
    beam_id: str
    power_beam: bool
    quality_flag: int
    degrade_flag: bool
    sensitivity: float
    night_acquisition: bool
    rh: tuple  # ((percentile, height_m), ...) sorted by percentile
    acquisition_time: datetime | None = None

    def rh_height(self, percentile: int) -> float:
        for p, h in self.rh:
            if p == percentile:
                return h
        raise KeyError(f"shot {self.shot_id}: no RH{percentile} value")

    def has_rh(self, percentile: int) -> bool:
        return any(p == percentile for p, _ in self.rh)


@dataclass
class TreeRecord:
    plot_id: str
    dbh_cm: float
    height_m: float


@dataclass
class PlotMeasurement:
    """A circular field plot with its tree inventory."""

    plot_id: str
    lat: float
    lon: float
    diameter_m: float = 25.0
    trees: list = field(default_factory=list)
    agb_mg_ha: float | None = None


@dataclass
class LoadResult:
    """Loaded records plus per-row rejection reasons."""

    records: list
    rejects: list  # (1-based data row number, reason)

    @property
    def n_loaded(self) -> int:
        return len(self.records)

    @property
    def n_rejected(self) -> int:
        return len(self.rejects)


def _parse_bool(text: str) -> bool:
    word = text.strip().lower()
    if word in _TRUE_WORDS:
        return True
    if word in _FALSE_WORDS:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _open_rows(path: Path):
    delimiter = "\t" if path.suffix.lower() == ".tsv" else ","
    with open(path, newline="") as fh:
        first = fh.readline()
        if "\t" in first and delimiter == ",":
            delimiter = "\t"
        fh.seek(0)
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            raise ValidationError(f"{path}: empty file")
        yield [name.strip() for name in reader.fieldnames]
        for row in reader:
            yield row


def load_footprints(path, column_map=None) -> LoadResult:
    """Read footprints from CSV/TSV.

    column_map renames canonical field names to the file's column names,
    e.g. ``{"shot_id": "shot_number"}``. RH columns are auto-detected by the
    ``rh<NN>`` pattern (after un-mapping). Rows violating record invariants
    are rejected with a reason rather than aborting the file.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"footprint file not found: {path}")
    column_map = dict(column_map or {})

    rows = _open_rows(path)
    header = next(rows)
    colname = {f: column_map.get(f, f) for f in FOOTPRINT_FIELDS}
    missing = [c for c in colname.values() if c not in header]
    if missing:
        raise ValidationError(f"{path}: missing mapped columns: {', '.join(missing)}")
    time_col = column_map.get("acquisition_time", "acquisition_time")
    has_time = time_col in header

    rh_map = {}  # file column -> percentile
    for col in header:
        m = RH_COLUMN_RE.match(col)
        if m and 0 <= int(m.group(1)) <= 100:
            rh_map[col] = int(m.group(1))
    if not rh_map:
        raise ValidationError(f"{path}: no RH columns found (expected rh30..rh98 style)")
    rh_cols = sorted(rh_map.items(), key=lambda kv: kv[1])

    records, rejects = [], []
    for row_no, row in enumerate(rows, start=1):
        try:
            records.append(_parse_footprint_row(row, colname, rh_cols, time_col if has_time else None))
        except (ValueError, KeyError) as exc:
            rejects.append((row_no, str(exc)))
    return LoadResult(records, rejects)


def _parse_footprint_row(row, colname, rh_cols, time_col):
    def cell(field):
        value = row.get(colname[field])
        if value is None or value == "":
            raise ValueError(f"{field}: empty value")
        return value

    try:
        lat = float(cell("lat"))
        lon = float(cell("lon"))
        sensitivity = float(cell("sensitivity"))
        quality_flag = int(float(cell("quality_flag")))
    except ValueError as exc:
        raise ValueError(f"non-numeric field ({exc})") from exc
    if not -90.0 <= lat <= 90.0:
        raise ValueError(f"lat out of range: {lat}")
    if not -180.0 <= lon <= 180.0:
        raise ValueError(f"lon out of range: {lon}")
    if not 0.0 <= sensitivity <= 1.0:
        raise ValueError(f"sensitivity out of range: {sensitivity}")
    if quality_flag not in (0, 1):
        raise ValueError(f"quality_flag not in {{0,1}}: {quality_flag}")

    rh = []
    for col, pct in rh_cols:
        text = row.get(col)
        if text is None or text == "":
            raise ValueError(f"{col}: empty value")
        try:
            rh.append((pct, float(text)))
        except ValueError as exc:
            raise ValueError(f"non-numeric field ({col})") from exc
    heights = [h for _, h in rh]
    if any(b < a for a, b in zip(heights, heights[1:])):
        raise ValueError("RH heights not monotone in percentile")

    acquisition_time = None
    if time_col is not None and row.get(time_col):
        try:
            acquisition_time = datetime.fromisoformat(row[time_col])
        except ValueError as exc:
            raise ValueError(f"bad acquisition_time ({row[time_col]!r})") from exc

    return FootprintRecord(
        shot_id=str(cell("shot_id")),
        lat=lat,
        lon=lon,
        beam_id=str(cell("beam_id")),
        power_beam=_parse_bool(cell("power_beam")),
        quality_flag=quality_flag,
        degrade_flag=_parse_bool(cell("degrade_flag")),
        sensitivity=sensitivity,
        night_acquisition=_parse_bool(cell("night_acquisition")),
        rh=tuple(rh),
        acquisition_time=acquisition_time,
    )


def write_footprints(records, path, extra_columns=None):
    """Write records back to CSV in the loader's format.

    extra_columns: optional {column_name: {shot_id: value}} appended on the
    right, e.g. SAR backscatter samples or rejection reasons.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    extra_columns = extra_columns or {}
    percentiles = sorted({p for r in records for p, _ in r.rh}) if records else []
    fieldnames = list(FOOTPRINT_FIELDS) + ["acquisition_time"] \
        + [f"rh{p}" for p in percentiles] + list(extra_columns)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for rec in records:
            heights = dict(rec.rh)
            row = [
                rec.shot_id, repr(rec.lat), repr(rec.lon), rec.beam_id,
                int(rec.power_beam), rec.quality_flag, int(rec.degrade_flag),
                repr(rec.sensitivity), int(rec.night_acquisition),
                rec.acquisition_time.isoformat() if rec.acquisition_time else "",
            ]
            row += [repr(heights[p]) if p in heights else "" for p in percentiles]
            row += [extra_columns[col].get(rec.shot_id, "") for col in extra_columns]
            writer.writerow(row)


def write_labeled_samples(samples, feature_names, path):
    """Labeled training table: id, position, label, slope, then features."""
    import numpy as np

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["shot_id", "lat", "lon", "agb_mg_ha", "slope_deg",
                         *feature_names])
        for s in samples:
            if s.features is None or len(s.features) != len(feature_names):
                raise ValidationError(f"sample {s.shot_id} has no feature vector")
            writer.writerow([
                s.shot_id, repr(s.lat), repr(s.lon), repr(s.agb_mg_ha),
                "" if s.slope_deg is None else repr(s.slope_deg),
                *[repr(float(v)) for v in s.features],
            ])


def read_labeled_samples(path):
    """Returns (samples, feature_names) from a labeled training table."""
    import numpy as np

    from .calibration import LabeledSample

    path = Path(path)
    if not path.exists():
        raise ValidationError(f"labeled sample file not found: {path}")
    rows = _open_rows(path)
    header = next(rows)
    fixed = ["shot_id", "lat", "lon", "agb_mg_ha", "slope_deg"]
    if header[:5] != fixed:
        raise ValidationError(f"{path}: expected columns {fixed} then features")
    feature_names = header[5:]
    if not feature_names:
        raise ValidationError(f"{path}: no feature columns")
    samples = []
    for row in rows:
        s = LabeledSample(
            shot_id=row["shot_id"],
            lat=float(row["lat"]),
            lon=float(row["lon"]),
            agb_mg_ha=float(row["agb_mg_ha"]),
            features=np.array([float(row[c]) for c in feature_names]),
            slope_deg=float(row["slope_deg"]) if row["slope_deg"] else None,
        )
        samples.append(s)
    return samples, feature_names


def load_plots(plot_path, tree_path) -> LoadResult:
    """Read plot headers and their tree rows from the two inventory files.

    Plot file columns: plot_id, lat, lon, diameter_m. Tree file columns:
    plot_id, dbh_cm, height_m. Tree rows naming an unknown plot and rows with
    non-positive DBH or height are rejected with reasons.
    """
    plot_path, tree_path = Path(plot_path), Path(tree_path)
    for p in (plot_path, tree_path):
        if not p.exists():
            raise ValidationError(f"plot inventory file not found: {p}")

    plots: dict[str, PlotMeasurement] = {}
    rejects = []

    rows = _open_rows(plot_path)
    header = next(rows)
    for col in ("plot_id", "lat", "lon", "diameter_m"):
        if col not in header:
            raise ValidationError(f"{plot_path}: missing column {col}")
    for row_no, row in enumerate(rows, start=1):
        try:
            plot_id = row["plot_id"].strip()
            if not plot_id:
                raise ValueError("empty plot_id")
            if plot_id in plots:
                raise ValueError(f"duplicate plot_id {plot_id}")
            diameter = float(row["diameter_m"] or 25.0)
            if diameter <= 0:
                raise ValueError(f"diameter_m must be > 0, got {diameter}")
            plots[plot_id] = PlotMeasurement(
                plot_id, float(row["lat"]), float(row["lon"]), diameter
            )
        except (ValueError, KeyError) as exc:
            rejects.append((row_no, f"plot row: {exc}"))

    rows = _open_rows(tree_path)
    header = next(rows)
    for col in ("plot_id", "dbh_cm", "height_m"):
        if col not in header:
            raise ValidationError(f"{tree_path}: missing column {col}")
    for row_no, row in enumerate(rows, start=1):
        try:
            plot_id = row["plot_id"].strip()
            if plot_id not in plots:
                raise ValueError(f"tree row references unknown plot_id {plot_id!r}")
            dbh = float(row["dbh_cm"])
            height = float(row["height_m"])
            if dbh <= 0:
                raise ValueError(f"dbh_cm must be > 0, got {dbh}")
            if height <= 0:
                raise ValueError(f"height_m must be > 0, got {height}")
            plots[plot_id].trees.append(TreeRecord(plot_id, dbh, height))
        except (ValueError, KeyError) as exc:
            rejects.append((row_no, f"tree row: {exc}"))

    return LoadResult(list(plots.values()), rejects)


def write_plots(plots, plot_path, tree_path):
    plot_path, tree_path = Path(plot_path), Path(tree_path)
    plot_path.parent.mkdir(parents=True, exist_ok=True)
    with open(plot_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["plot_id", "lat", "lon", "diameter_m"])
        for p in plots:
            writer.writerow([p.plot_id, repr(p.lat), repr(p.lon), repr(p.diameter_m)])
    with open(tree_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["plot_id", "dbh_cm", "height_m"])
        for p in plots:
            for t in p.trees:
                writer.writerow([p.plot_id, repr(t.dbh_cm), repr(t.height_m)])
