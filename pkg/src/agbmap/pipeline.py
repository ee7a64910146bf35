"""End-to-end orchestration: one JSON config, one reproducible run.

Stage order: load footprints -> flag screen -> build/load stack -> sample
backscatter -> fit/apply the consistency band -> calibrate and label ->
attach features -> k-fold train/predict/ensemble per learner -> mask ->
evaluate. Every stage appends its row counts and wall time to the manifest;
outputs are content-digested so a rerun can be compared file by file. All
randomness flows from seeds in the config.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import (
    RhAgbModel,
    fit_rh_agb,
    label_footprints,
    match_plots_to_footprints,
    plot_agb,
    select_rh_percentile,
)
from .ensemble import cv_train, ensemble_maps, kfold_split, predict_map
from .errors import StageError, ValidationError
from .evaluation import slope_stratified_metrics, validate_against_plots
from .grids import load_raster, write_raster
from .ingest import load_footprints, load_plots, write_labeled_samples
from .learners import KIND_GBDT, KIND_RANDOM_FOREST, TrainConfig
from .logs import log_event
from .quality import QualityCriteria, filter_quality
from .sar import CurveFit, filter_by_band, fit_rh_backscatter
from .stack import (
    POLARIZATION_LAYERS,
    apply_mask,
    assemble_stack,
    build_canonical_layers,
    build_forest_mask,
    load_stack,
    sample_stack_many,
    save_stack,
)
from .synth import SynthSpec, make_synthetic_world

_LEARNER_ALIASES = {
    "gbdt": KIND_GBDT, "lightgbm": KIND_GBDT, KIND_GBDT: KIND_GBDT,
    "rf": KIND_RANDOM_FOREST, "random_forest": KIND_RANDOM_FOREST,
    "random-forest": KIND_RANDOM_FOREST,
}


@dataclass
class SarFilterConfig:
    enabled: bool = True
    curve_paths: list = field(default_factory=list)  # pre-fitted curves, optional
    polarizations: list = field(default_factory=lambda: ["HV", "VH"])
    form: str = "saturating_exp"
    tolerance_db: float = 3.0
    rh_percentile: int = 98


@dataclass
class CalibrationConfig:
    form: str = "power"
    percentile: int | None = None  # None -> select by correlation
    max_match_distance_m: float = 12.5
    min_dbh_cm: float = 5.0


@dataclass
class PipelineConfig:
    footprints: Path
    out_dir: Path
    plots: Path | None = None
    trees: Path | None = None
    stack_build: Path | None = None
    stack_manifest: Path | None = None
    mask_cover: Path | None = None
    mask_loss: Path | None = None
    mask_gain: Path | None = None
    mask_raster: Path | None = None
    column_map: dict = field(default_factory=dict)
    quality: QualityCriteria = field(default_factory=QualityCriteria)
    sar: SarFilterConfig = field(default_factory=SarFilterConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    learners: list = field(default_factory=lambda: [KIND_GBDT, KIND_RANDOM_FOREST])
    train: TrainConfig = field(default_factory=TrainConfig)
    cv_k: int = 5
    cv_seed: int = 42
    cover_threshold_pct: float = 30.0
    chunk_rows: int = 256
    region_label: str = ""

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"config not found: {path}")
        raw = json.loads(path.read_text())
        return cls.from_json_dict(raw, base_dir=path.parent)

    @classmethod
    def from_json_dict(cls, raw: dict, base_dir: Path) -> "PipelineConfig":
        paths = raw.get("paths", {})

        def p(key):
            v = paths.get(key)
            return (base_dir / v) if v else None

        mask = paths.get("mask", {}) or {}

        def pm(key):
            v = mask.get(key)
            return (base_dir / v) if v else None

        learners = [
            _LEARNER_ALIASES.get(str(name).lower())
            for name in raw.get("learners", ["gbdt", "random_forest"])
        ]
        if any(l is None for l in learners):
            raise ValidationError(f"unknown learner in config: {raw.get('learners')}")
        cfg = cls(
            footprints=p("footprints"),
            out_dir=p("out_dir") or (base_dir / "run"),
            plots=p("plots"),
            trees=p("trees"),
            stack_build=p("stack_build"),
            stack_manifest=p("stack_manifest"),
            mask_cover=pm("cover"),
            mask_loss=pm("loss"),
            mask_gain=pm("gain"),
            mask_raster=pm("raster"),
            column_map=raw.get("column_map", {}),
            quality=QualityCriteria(**raw.get("quality", {})),
            sar=SarFilterConfig(**{
                **raw.get("sar_filter", {}),
                "curve_paths": [base_dir / c
                                for c in raw.get("sar_filter", {}).get("curve_paths", [])],
            }),
            calibration=CalibrationConfig(**raw.get("calibration", {})),
            learners=learners,
            train=TrainConfig.from_json_dict(raw.get("train", {})),
            cv_k=raw.get("cv", {}).get("k", 5),
            cv_seed=raw.get("cv", {}).get("seed", 42),
            cover_threshold_pct=raw.get("cover_threshold_pct", 30.0),
            chunk_rows=raw.get("chunk_rows", 256),
            region_label=raw.get("region_label", ""),
        )
        cfg.validate()
        return cfg

    def validate(self):
        if self.footprints is None:
            raise ValidationError("config: paths.footprints is required")
        if (self.stack_build is None) == (self.stack_manifest is None):
            raise ValidationError(
                "config: exactly one of paths.stack_build or paths.stack_manifest"
            )
        required = [self.footprints,
                    self.stack_build or self.stack_manifest] + list(self.sar.curve_paths)
        if self.plots or self.trees:
            if not (self.plots and self.trees):
                raise ValidationError("config: plots and trees must be given together")
            required += [self.plots, self.trees]
        mask_set = [self.mask_cover, self.mask_loss, self.mask_gain]
        if any(mask_set) and not all(mask_set):
            raise ValidationError("config: mask needs cover, loss, and gain together")
        required += [q for q in mask_set if q]
        if self.mask_raster:
            required.append(self.mask_raster)
        missing = [str(q) for q in required if not Path(q).exists()]
        if missing:
            raise ValidationError(f"config references missing files: {missing}")
        if self.calibration.percentile is None and not self.plots:
            raise ValidationError(
                "config: percentile selection needs field plots; either provide "
                "paths.plots/trees or pin calibration.percentile"
            )
        if self.cv_k < 2:
            raise ValidationError("config: cv.k must be >= 2")


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    artifact_version: str
    config_digest: str
    region_label: str
    inputs: dict = field(default_factory=dict)    # path -> sha256
    stages: list = field(default_factory=list)    # {name, seconds, counts}
    outputs: dict = field(default_factory=dict)   # relative path -> sha256
    status: str = "running"

    def to_json_dict(self) -> dict:
        return {
            "artifact_version": self.artifact_version,
            "config_digest": self.config_digest,
            "region_label": self.region_label,
            "inputs": self.inputs,
            "stages": self.stages,
            "outputs": self.outputs,
            "status": self.status,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1))


class _StageTimer:
    def __init__(self, manifest: RunManifest, name: str):
        self.manifest = manifest
        self.name = name
        self.counts = {}

    def __enter__(self):
        self.t0 = time.perf_counter()
        log_event("stage-start", stage=self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        seconds = round(time.perf_counter() - self.t0, 3)
        self.manifest.stages.append(
            {"name": self.name, "seconds": seconds, "counts": self.counts})
        if exc_type is None:
            log_event("stage-done", stage=self.name, seconds=seconds, **self.counts)
        return False


def build_stack_from_config(build_cfg: dict | Path, base_dir: Path | None = None):
    """Assemble the canonical stack from a build config of raster paths."""
    if not isinstance(build_cfg, dict):
        cfg_path = Path(build_cfg)
        base_dir = base_dir or cfg_path.parent
        build_cfg = json.loads(cfg_path.read_text())
    base_dir = Path(base_dir or ".")

    def rast(rel):
        return load_raster(base_dir / rel)

    inputs = {
        "s1_vv_db": [rast(r) for r in build_cfg["s1_vv_db"]],
        "s1_vh_db": [rast(r) for r in build_cfg["s1_vh_db"]],
        "p2_hh_dn": rast(build_cfg["p2_hh_dn"]),
        "p2_hv_dn": rast(build_cfg["p2_hv_dn"]),
        "s2": {band: rast(r) for band, r in build_cfg["s2"].items()},
        "ndvi_dates": [(rast(d["nir"]), rast(d["red"]))
                       for d in build_cfg["ndvi_dates"]],
        "dem": rast(build_cfg["dem"]),
    }
    return assemble_stack(build_canonical_layers(inputs))


def _stage(name):
    """Re-raise stage exceptions with the stage name attached."""
    class _Wrap:
        def __init__(self, timer):
            self.timer = timer

        def __enter__(self):
            return self.timer.__enter__()

        def __exit__(self, exc_type, exc, tb):
            self.timer.__exit__(exc_type, exc, tb)
            if exc_type is not None and not issubclass(exc_type, StageError):
                raise StageError(name, str(exc)) from exc
            return False
    return _Wrap


def run_pipeline(config: PipelineConfig) -> RunManifest:
    """Execute every stage; artifacts land under config.out_dir."""
    config.validate()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    config_digest = hashlib.sha256(
        json.dumps(_config_fingerprint(config), sort_keys=True).encode()
    ).hexdigest()
    manifest = RunManifest(__version__, config_digest, config.region_label)
    for path in [config.footprints, config.plots, config.trees,
                 config.stack_build, config.stack_manifest, config.mask_cover,
                 config.mask_loss, config.mask_gain, config.mask_raster,
                 *config.sar.curve_paths]:
        if path:
            manifest.inputs[str(path)] = _digest(Path(path))

    def emit(relpath: str):
        manifest.outputs[relpath] = _digest(out_dir / relpath)

    try:
        _run_stages(config, manifest, out_dir, emit)
        manifest.status = "ok"
    except BaseException:
        manifest.status = "failed"
        raise
    finally:
        manifest.save(out_dir / "manifest.json")
    return manifest


def _run_stages(config, manifest, out_dir, emit):
    timer = lambda name: _stage(name)(_StageTimer(manifest, name))  # noqa: E731

    with timer("load-footprints") as st:
        loaded = load_footprints(config.footprints, config.column_map)
        st.counts.update(loaded=loaded.n_loaded, rejected=loaded.n_rejected)
        if not loaded.records:
            raise ValidationError("no valid footprints loaded")

    with timer("filter-quality") as st:
        retained, rejected = filter_quality(loaded.records, config.quality)
        st.counts.update(retained=len(retained), rejected=len(rejected))
        if not retained:
            raise ValidationError("no footprints pass the quality screen")

    with timer("build-stack") as st:
        if config.stack_manifest:
            stack = load_stack(config.stack_manifest)
        else:
            stack = build_stack_from_config(config.stack_build)
            save_stack(stack, out_dir / "stack")
            for name in stack.layer_names:
                emit(f"stack/{name}.tif")
            emit("stack/stack.json")
        st.counts.update(layers=stack.n_layers,
                         rows=stack.grid_spec.n_rows, cols=stack.grid_spec.n_cols)

    if config.sar.enabled:
        with timer("filter-sar") as st:
            lats = [r.lat for r in retained]
            lons = [r.lon for r in retained]
            matrix, _, inside = sample_stack_many(stack, lats, lons)
            pol_cols = {
                pol: stack.layer_names.index(POLARIZATION_LAYERS[pol])
                for pol in config.sar.polarizations
            }
            samples_g = [
                {pol: float(matrix[i, j]) for pol, j in pol_cols.items()}
                for i in range(len(retained))
            ]
            if config.sar.curve_paths:
                fits = [CurveFit.load(p) for p in config.sar.curve_paths]
            else:
                fits = []
                pct = config.sar.rh_percentile
                for pol in config.sar.polarizations:
                    pairs = [
                        (rec.rh_height(pct), g[pol])
                        for rec, g, ok in zip(retained, samples_g, inside)
                        if ok and rec.has_rh(pct) and np.isfinite(g[pol])
                    ]
                    fit = fit_rh_backscatter(pairs, config.sar.form, pol,
                                             config.sar.tolerance_db)
                    fit.save(out_dir / f"sar_curve_{pol.lower()}.json")
                    emit(f"sar_curve_{pol.lower()}.json")
                    fits.append(fit)
            retained, sar_rejected = filter_by_band(
                retained, samples_g, fits, config.sar.rh_percentile)
            st.counts.update(retained=len(retained), rejected=len(sar_rejected))
            if not retained:
                raise ValidationError("no footprints pass the backscatter band")

    with timer("calibrate") as st:
        plots = []
        if config.plots:
            plot_load = load_plots(config.plots, config.trees)
            plots = plot_load.records
            for plot in plots:
                plot.agb_mg_ha = plot_agb(plot, config.calibration.min_dbh_cm)
            st.counts.update(plots=len(plots), plot_rows_rejected=plot_load.n_rejected)
        percentile = config.calibration.percentile
        matches = []
        if plots:
            matches = match_plots_to_footprints(
                plots, retained, config.calibration.max_match_distance_m)
            st.counts.update(matched_plots=len(matches))
        if percentile is None:
            pairs = [(p.agb_mg_ha, dict(rec.rh)) for p, rec, _ in matches]
            percentile, corr_table = select_rh_percentile(pairs)
            (out_dir / "percentile_selection.json").write_text(json.dumps({
                "selected": percentile,
                "table": [{"percentile": c.percentile, "pearson_r": c.pearson_r,
                           "n": c.n, "skipped_no_variance": c.skipped_no_variance}
                          for c in corr_table],
            }, indent=1))
            emit("percentile_selection.json")
        if matches:
            fit_pairs = [(rec.rh_height(percentile), p.agb_mg_ha)
                         for p, rec, _ in matches]
            rh_model = fit_rh_agb(fit_pairs, percentile, config.calibration.form,
                                  config.region_label)
        else:
            raise ValidationError("no plot/footprint matches for calibration")
        rh_model.save(out_dir / "rh_agb.json")
        emit("rh_agb.json")
        label_result = label_footprints(retained, rh_model)
        st.counts.update(percentile=percentile, labeled=len(label_result.samples),
                         clamped_negative=label_result.n_clamped)

    with timer("attach-features") as st:
        samples = label_result.samples
        matrix, complete, inside = sample_stack_many(
            stack, [s.lat for s in samples], [s.lon for s in samples])
        slope_col = stack.layer_names.index("SLOPE")
        kept = []
        for i, s in enumerate(samples):
            if complete[i]:
                s.features = matrix[i]
                s.slope_deg = float(matrix[i, slope_col])
                kept.append(s)
        st.counts.update(complete=len(kept), incomplete=len(samples) - len(kept))
        if len(kept) < config.cv_k:
            raise ValidationError("not enough complete samples for cross-validation")
        samples = kept
        write_labeled_samples(samples, stack.layer_names, out_dir / "labeled.csv")
        emit("labeled.csv")

    mask = None
    if config.mask_raster or config.mask_cover:
        with timer("build-mask") as st:
            if config.mask_raster:
                from .stack import ForestMask
                mask = ForestMask(load_raster(config.mask_raster), "provided")
            else:
                mask = build_forest_mask(
                    load_raster(config.mask_cover), load_raster(config.mask_loss),
                    load_raster(config.mask_gain), config.cover_threshold_pct,
                    provenance="cover/loss/gain inputs")
                write_raster(mask.grid, out_dir / "forest_mask.tif")
                emit("forest_mask.tif")
            st.counts.update(
                forest_pixels=int(np.count_nonzero(mask.grid.values == 1)))

    folds = kfold_split(len(samples), config.cv_k, config.cv_seed)
    reports = {}
    for learner in config.learners:
        with timer(f"cv-{learner}") as st:
            cv = cv_train(samples, learner, config.train, folds=folds,
                          feature_names=stack.layer_names)
            for i, model in enumerate(cv.models):
                model.save(out_dir / f"model_{learner}_fold{i}.json")
                emit(f"model_{learner}_fold{i}.json")
            fold_maps = []
            n_clamped = 0
            for model in cv.models:
                mp = predict_map(model, stack, config.chunk_rows)
                n_clamped += mp.n_clamped_negative
                fold_maps.append(mp.grid)
            mean_map, std_map = ensemble_maps(fold_maps)
            write_raster(mean_map, out_dir / f"agb_mean_{learner}.tif")
            write_raster(std_map, out_dir / f"agb_std_{learner}.tif")
            emit(f"agb_mean_{learner}.tif")
            emit(f"agb_std_{learner}.tif")
            if mask is not None:
                masked = apply_mask(mean_map, mask)
                write_raster(masked, out_dir / f"agb_mean_{learner}_masked.tif")
                emit(f"agb_mean_{learner}_masked.tif")

            y = np.array([s.agb_mg_ha for s in samples])
            slope = np.array([s.slope_deg for s in samples])
            strat = slope_stratified_metrics(
                np.column_stack([y, cv.oof_predictions, slope]),
                label=f"{learner} OOF by slope")
            reports[learner] = {
                "pooled": cv.pooled_metrics.to_json_dict(),
                "folds": [m.to_json_dict() for m in cv.fold_metrics],
                "slope_stratified": strat.to_json_dict(),
                "clamped_negative_pixels": n_clamped,
            }
            st.counts.update(
                pooled_r2=round(cv.pooled_metrics.r2, 6)
                if cv.pooled_metrics.r2 is not None else None,
                pooled_rmse=round(cv.pooled_metrics.rmse, 3),
            )

    if plots:
        with timer("evaluate-plots") as st:
            for learner in config.learners:
                suffix = "_masked" if mask is not None else ""
                map_path = out_dir / f"agb_mean_{learner}{suffix}.tif"
                validation = validate_against_plots(
                    load_raster(map_path), plots, f"{learner} vs plots")
                reports[learner]["plot_validation"] = {
                    **validation.metrics.to_json_dict(),
                    "n_excluded_nodata": validation.n_excluded_nodata,
                    "n_outside_extent": validation.n_outside_extent,
                    "pairs": validation.pairs,
                }
            st.counts.update(plots=len(plots))

    (out_dir / "metrics.json").write_text(json.dumps(reports, indent=1))
    emit("metrics.json")


def _config_fingerprint(config: PipelineConfig) -> dict:
    return {
        "quality": config.quality.__dict__,
        "sar": {**config.sar.__dict__,
                "curve_paths": [str(p) for p in config.sar.curve_paths]},
        "calibration": config.calibration.__dict__,
        "learners": config.learners,
        "train": config.train.to_json_dict(),
        "cv": {"k": config.cv_k, "seed": config.cv_seed},
        "cover_threshold_pct": config.cover_threshold_pct,
        "chunk_rows": config.chunk_rows,
        "region_label": config.region_label,
    }


def write_pipeline_config_template(world_paths: dict, out_path,
                                   spec: SynthSpec,
                                   train: dict | None = None) -> Path:
    """Config JSON wired to a written synthetic world (synth-world CLI)."""
    out_path = Path(out_path)
    base = out_path.parent
    rel = lambda p: str(Path(p).relative_to(base))  # noqa: E731
    cfg = {
        "region_label": f"synthetic-seed{spec.seed}",
        "paths": {
            "footprints": rel(world_paths["footprints"]),
            "plots": rel(world_paths["plots"]),
            "trees": rel(world_paths["trees"]),
            "stack_build": rel(world_paths["stack_build"]),
            "out_dir": "run",
            "mask": {
                "cover": str(Path("rasters") / "cover2000.tif"),
                "loss": str(Path("rasters") / "loss_year.tif"),
                "gain": str(Path("rasters") / "gain.tif"),
            },
        },
        "quality": {},
        "sar_filter": {"polarizations": ["HV", "VH"], "tolerance_db": 3.0,
                       "rh_percentile": 98},
        "calibration": {"form": "power"},
        "learners": ["gbdt", "random_forest"],
        "train": train or {
            "n_trees": 60, "seed": 7,
            "rf": {"min_leaf": 8},
            "gbdt": {},
        },
        "cv": {"k": 5, "seed": 42},
    }
    out_path.write_text(json.dumps(cfg, indent=1))
    return out_path
