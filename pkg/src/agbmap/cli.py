"""Command-line front-end; every subcommand wraps one library operation.

Exit codes: 0 success, 1 validation failure (bad inputs or config), 2 stage
failure (a pipeline step started and then failed). Progress goes to stderr
as JSON lines; results are files plus a one-line JSON summary on stdout.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
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
from .evaluation import validate_against_plots
from .grids import load_raster, write_raster
from .ingest import (
    load_footprints,
    load_plots,
    read_labeled_samples,
    write_footprints,
    write_labeled_samples,
)
from .learners import (
    ForestModel,
    TrainConfig,
    benchmark_training,
    compare_backends,
    train_gbdt,
    train_random_forest,
)
from .logs import log_event
from .pipeline import (
    PipelineConfig,
    build_stack_from_config,
    run_pipeline,
    write_pipeline_config_template,
    _LEARNER_ALIASES,
)
from .quality import QualityCriteria, filter_quality
from .sar import CurveFit, filter_by_band, fit_rh_backscatter
from .stack import build_forest_mask, load_stack, sample_stack_many, save_stack
from .synth import SynthSpec, make_synthetic_world


def _emit(payload: dict):
    print(json.dumps(payload))


def _form_name(text: str) -> str:
    return text.replace("-", "_")


# --- subcommand handlers -----------------------------------------------------

def _cmd_filter_quality(args):
    loaded = load_footprints(args.infile, json.loads(args.column_map)
                             if args.column_map else None)
    criteria = QualityCriteria(
        require_quality_flag=args.require_quality_flag,
        exclude_degrade=not args.keep_degrade,
        min_sensitivity=args.min_sensitivity,
        require_night=not args.allow_day,
        require_power_beam=not args.allow_coverage_beams,
    )
    retained, rejected = filter_quality(loaded.records, criteria)
    write_footprints(retained, args.out)
    if args.rejects:
        write_footprints(
            [rec for rec, _ in rejected], args.rejects,
            extra_columns={"reject_reasons": {
                rec.shot_id: ";".join(reasons) for rec, reasons in rejected}},
        )
    _emit({"loaded": loaded.n_loaded, "malformed": loaded.n_rejected,
           "retained": len(retained), "rejected": len(rejected)})


def _cmd_fit_sar_curve(args):
    pairs = []
    with open(args.pairs, newline="") as fh:
        for row in csv.DictReader(fh):
            pairs.append((float(row["rh_m"]), float(row["gamma_db"])))
    fit = fit_rh_backscatter(pairs, _form_name(args.form), args.polarization,
                             args.tol_db)
    fit.save(args.out)
    _emit({"out": args.out, **fit.to_json_dict()})


def _read_gamma_columns(path, records):
    """gamma_<pol> columns from a footprint CSV, keyed by shot_id."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        gamma_cols = [c for c in reader.fieldnames or [] if c.startswith("gamma_")]
        by_shot = {}
        id_col = "shot_id"
        for row in reader:
            by_shot[row[id_col]] = {
                c[len("gamma_"):].upper(): float(row[c])
                for c in gamma_cols if row[c] not in ("", None)
            }
    return [by_shot.get(rec.shot_id, {}) for rec in records]


def _cmd_filter_sar(args):
    loaded = load_footprints(args.infile)
    fits = [CurveFit.load(p) for p in args.curves.split(",")]
    if args.tol_db is not None:
        for fit in fits:
            fit.tolerance_db = args.tol_db
    samples = _read_gamma_columns(args.infile, loaded.records)
    retained, rejected = filter_by_band(loaded.records, samples, fits, args.rh)
    write_footprints(retained, args.out)
    if args.rejects:
        write_footprints(
            [rec for rec, _ in rejected], args.rejects,
            extra_columns={"reject_reasons": {
                rec.shot_id: ";".join(reasons) for rec, reasons in rejected}})
    _emit({"loaded": loaded.n_loaded, "retained": len(retained),
           "rejected": len(rejected)})


def _cmd_fit_allometry(args):
    plot_load = load_plots(args.plots, args.trees)
    plots = plot_load.records
    for plot in plots:
        plot.agb_mg_ha = plot_agb(plot, args.min_dbh)
    footprints = load_footprints(args.footprints).records
    matches = match_plots_to_footprints(plots, footprints, args.max_distance)
    if not matches:
        raise ValidationError("no plot/footprint matches within the distance cap")
    report = {"matched_plots": len(matches)}
    percentile = args.percentile
    if percentile is None:
        percentile, table = select_rh_percentile(
            [(p.agb_mg_ha, dict(rec.rh)) for p, rec, _ in matches])
        report["selection_table"] = [
            {"percentile": c.percentile, "pearson_r": c.pearson_r, "n": c.n}
            for c in table]
    model = fit_rh_agb(
        [(rec.rh_height(percentile), p.agb_mg_ha) for p, rec, _ in matches],
        percentile, _form_name(args.form), args.region_label)
    model.save(args.out)
    _emit({"out": args.out, **report, **model.to_json_dict()})


def _cmd_label(args):
    loaded = load_footprints(args.footprints)
    model = RhAgbModel.load(args.model)
    result = label_footprints(loaded.records, model)
    samples = result.samples
    if args.stack:
        stack = load_stack(args.stack)
        matrix, complete, _ = sample_stack_many(
            stack, [s.lat for s in samples], [s.lon for s in samples])
        slope_col = stack.layer_names.index("SLOPE")
        kept = []
        for i, s in enumerate(samples):
            if complete[i]:
                s.features = matrix[i]
                s.slope_deg = float(matrix[i, slope_col])
                kept.append(s)
        write_labeled_samples(kept, stack.layer_names, args.out)
        _emit({"labeled": len(samples), "complete": len(kept),
               "clamped_negative": result.n_clamped, "out": args.out})
    else:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["shot_id", "lat", "lon", "agb_mg_ha"])
            for s in samples:
                writer.writerow([s.shot_id, repr(s.lat), repr(s.lon),
                                 repr(s.agb_mg_ha)])
        _emit({"labeled": len(samples), "clamped_negative": result.n_clamped,
               "out": args.out})


def _cmd_build_stack(args):
    stack = build_stack_from_config(Path(args.config))
    manifest = save_stack(stack, args.out_dir)
    _emit({"layers": stack.n_layers, "manifest": str(manifest)})


def _cmd_build_mask(args):
    mask = build_forest_mask(
        load_raster(args.cover), load_raster(args.loss), load_raster(args.gain),
        args.threshold, provenance=f"cover>={args.threshold}")
    write_raster(mask.grid, args.out)
    _emit({"out": args.out,
           "forest_pixels": int(np.count_nonzero(mask.grid.values == 1))})


def _train_config_from_args(args) -> TrainConfig:
    if args.config:
        cfg = TrainConfig.from_json_dict(json.loads(Path(args.config).read_text()))
    else:
        cfg = TrainConfig()
    if args.trees is not None:
        cfg.n_trees = args.trees
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg


def _cmd_train(args):
    samples, feature_names = read_labeled_samples(args.samples)
    X = np.array([s.features for s in samples])
    y = np.array([s.agb_mg_ha for s in samples])
    cfg = _train_config_from_args(args)
    trainer = train_gbdt if _LEARNER_ALIASES[args.learner] == "gbdt" \
        else train_random_forest
    model = trainer(X, y, cfg, feature_names=feature_names)
    model.save(args.out)
    _emit({"out": args.out, "kind": model.kind, "n": len(samples),
           "p": len(feature_names), "seed": cfg.seed})


def _cmd_cv_run(args):
    samples, feature_names = read_labeled_samples(args.samples)
    stack = load_stack(args.stack)
    if list(stack.layer_names) != list(feature_names):
        raise ValidationError("labeled feature columns do not match stack layers")
    cfg = _train_config_from_args(args)
    learner = _LEARNER_ALIASES[args.learner]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    folds = kfold_split(len(samples), args.k, args.cv_seed)
    cv = cv_train(samples, learner, cfg, folds=folds, feature_names=feature_names)
    maps = []
    for i, model in enumerate(cv.models):
        model.save(out_dir / f"model_fold{i}.json")
        maps.append(predict_map(model, stack, args.chunk_rows).grid)
    mean_map, std_map = ensemble_maps(maps)
    write_raster(mean_map, out_dir / "mean.tif")
    write_raster(std_map, out_dir / "std.tif")
    report = {
        "pooled": cv.pooled_metrics.to_json_dict(),
        "folds": [m.to_json_dict() for m in cv.fold_metrics],
    }
    (out_dir / "metrics.json").write_text(json.dumps(report, indent=1))
    _emit({"out_dir": str(out_dir), "pooled_r2": cv.pooled_metrics.r2,
           "pooled_rmse": cv.pooled_metrics.rmse})


def _cmd_predict(args):
    model = ForestModel.load(args.model)
    stack = load_stack(args.stack)
    result = predict_map(model, stack, args.chunk_rows)
    write_raster(result.grid, args.out)
    _emit({"out": args.out, "clamped_negative": result.n_clamped_negative,
           "nodata_pixels": result.n_nodata_pixels})


def _cmd_ensemble(args):
    maps = [load_raster(p) for p in args.maps.split(",")]
    mean_map, std_map = ensemble_maps(maps)
    write_raster(mean_map, args.out_mean)
    write_raster(std_map, args.out_std)
    _emit({"k": len(maps), "out_mean": args.out_mean, "out_std": args.out_std})


def _cmd_evaluate(args):
    plot_load = load_plots(args.plots, args.trees)
    plots = plot_load.records
    for plot in plots:
        plot.agb_mg_ha = plot_agb(plot, args.min_dbh)
    validation = validate_against_plots(load_raster(args.map), plots)
    report = {
        **validation.metrics.to_json_dict(),
        "n_excluded_nodata": validation.n_excluded_nodata,
        "n_outside_extent": validation.n_outside_extent,
    }
    Path(args.out).write_text(json.dumps(report, indent=1))
    if args.pairs_csv:
        with open(args.pairs_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["plot_id", "observed_mg_ha", "predicted_mg_ha"])
            writer.writerows(validation.pairs)
    _emit(report)


def _cmd_run(args):
    config = PipelineConfig.from_json(args.config)
    if args.threads is not None:
        config.train.threads = args.threads
    manifest = run_pipeline(config)
    _emit({"status": manifest.status,
           "out_dir": str(config.out_dir),
           "stages": [s["name"] for s in manifest.stages]})


def _cmd_synth_world(args):
    spec = SynthSpec(
        n_rows=args.size, n_cols=args.size, n_footprints=args.footprints,
        n_plots=args.plots, outlier_fraction=args.outlier_fraction,
        quality_fail_fraction=args.quality_fail_fraction, seed=args.seed,
    )
    world = make_synthetic_world(spec)
    paths = world.write(args.out_dir)
    config_path = write_pipeline_config_template(
        paths, Path(args.out_dir) / "pipeline.json", spec)
    _emit({**paths, "pipeline_config": str(config_path),
           "footprint_count": len(world.footprints),
           "planted_outliers": len(world.outlier_ids),
           "planted_quality_failures": len(world.quality_fail_ids)})


def _cmd_bench(args):
    rng = np.random.default_rng(args.seed)
    X = rng.standard_normal((args.n, args.p))
    beta = rng.standard_normal(args.p)
    y = X @ beta + 0.5 * rng.standard_normal(args.n)
    cfg = TrainConfig(n_trees=args.trees, seed=args.seed, threads=args.threads)
    learners = [_LEARNER_ALIASES[l] for l in args.learners.split(",")]
    if args.backends:
        report = compare_backends(X, y, cfg, learners,
                                  backends=args.backends.split(","))
    else:
        report = benchmark_training(X, y, cfg, learners)
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=1))
    _emit(report)


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agbmap",
        description="Sparse lidar footprints + SAR/optical rasters -> "
                    "biomass maps with uncertainty.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    q = sub.add_parser("filter-quality", help="flag-based footprint screening")
    q.add_argument("--in", dest="infile", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--rejects")
    q.add_argument("--column-map", help="JSON object renaming columns")
    q.add_argument("--min-sensitivity", type=float, default=0.98)
    q.add_argument("--require-quality-flag", type=int, default=1)
    q.add_argument("--allow-day", action="store_true")
    q.add_argument("--allow-coverage-beams", action="store_true")
    q.add_argument("--keep-degrade", action="store_true")
    q.set_defaults(func=_cmd_filter_quality)

    c = sub.add_parser("fit-sar-curve", help="fit backscatter vs RH height")
    c.add_argument("--pairs", required=True, help="CSV with rh_m,gamma_db")
    c.add_argument("--form", default="saturating-exp",
                   choices=["saturating-exp", "log-linear"])
    c.add_argument("--polarization", default="")
    c.add_argument("--tol-db", type=float, default=3.0)
    c.add_argument("--out", required=True)
    c.set_defaults(func=_cmd_fit_sar_curve)

    s = sub.add_parser("filter-sar", help="drop footprints outside the band")
    s.add_argument("--in", dest="infile", required=True,
                   help="footprint CSV with gamma_<pol> columns")
    s.add_argument("--curves", required=True, help="comma-separated curve JSONs")
    s.add_argument("--tol-db", type=float, default=None)
    s.add_argument("--rh", type=int, default=98)
    s.add_argument("--out", required=True)
    s.add_argument("--rejects")
    s.set_defaults(func=_cmd_filter_sar)

    a = sub.add_parser("fit-allometry", help="plot AGB and the RH->AGB model")
    a.add_argument("--plots", required=True)
    a.add_argument("--trees", required=True)
    a.add_argument("--footprints", required=True)
    a.add_argument("--form", default="power", choices=["power", "linear"])
    a.add_argument("--percentile", type=int)
    a.add_argument("--max-distance", type=float, default=12.5)
    a.add_argument("--min-dbh", type=float, default=5.0)
    a.add_argument("--region-label", default="")
    a.add_argument("--out", required=True)
    a.set_defaults(func=_cmd_fit_allometry)

    l = sub.add_parser("label", help="convert footprint RH to biomass labels")
    l.add_argument("--footprints", required=True)
    l.add_argument("--model", required=True)
    l.add_argument("--stack", help="stack manifest; adds feature columns")
    l.add_argument("--out", required=True)
    l.set_defaults(func=_cmd_label)

    b = sub.add_parser("build-stack", help="run layer recipes, write the stack")
    b.add_argument("--config", required=True)
    b.add_argument("--out-dir", required=True)
    b.set_defaults(func=_cmd_build_stack)

    m = sub.add_parser("build-mask", help="forest mask from cover/loss/gain")
    m.add_argument("--cover", required=True)
    m.add_argument("--loss", required=True)
    m.add_argument("--gain", required=True)
    m.add_argument("--threshold", type=float, default=30.0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=_cmd_build_mask)

    t = sub.add_parser("train", help="train one model on labeled samples")
    t.add_argument("--samples", required=True)
    t.add_argument("--learner", required=True, choices=sorted(_LEARNER_ALIASES))
    t.add_argument("--config", help="TrainConfig JSON")
    t.add_argument("--trees", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--threads", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=_cmd_train)

    cv = sub.add_parser("cv-run", help="k-fold models, mean and std maps")
    cv.add_argument("--samples", required=True)
    cv.add_argument("--stack", required=True)
    cv.add_argument("--learner", required=True, choices=sorted(_LEARNER_ALIASES))
    cv.add_argument("--config", help="TrainConfig JSON")
    cv.add_argument("--trees", type=int)
    cv.add_argument("--seed", type=int)
    cv.add_argument("--threads", type=int)
    cv.add_argument("--k", type=int, default=5)
    cv.add_argument("--cv-seed", type=int, default=42)
    cv.add_argument("--chunk-rows", type=int, default=256)
    cv.add_argument("--out-dir", required=True)
    cv.set_defaults(func=_cmd_cv_run)

    p = sub.add_parser("predict", help="wall-to-wall map from one model")
    p.add_argument("--model", required=True)
    p.add_argument("--stack", required=True)
    p.add_argument("--chunk-rows", type=int, default=256)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    e = sub.add_parser("ensemble", help="mean/std over fold maps")
    e.add_argument("--maps", required=True, help="comma-separated rasters")
    e.add_argument("--out-mean", required=True)
    e.add_argument("--out-std", required=True)
    e.set_defaults(func=_cmd_ensemble)

    ev = sub.add_parser("evaluate", help="map accuracy against field plots")
    ev.add_argument("--map", required=True)
    ev.add_argument("--plots", required=True)
    ev.add_argument("--trees", required=True)
    ev.add_argument("--min-dbh", type=float, default=5.0)
    ev.add_argument("--out", required=True)
    ev.add_argument("--pairs-csv")
    ev.set_defaults(func=_cmd_evaluate)

    r = sub.add_parser("run", help="full pipeline from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--threads", type=int)
    r.set_defaults(func=_cmd_run)

    w = sub.add_parser("synth-world", help="seeded synthetic test world")
    w.add_argument("--out-dir", required=True)
    w.add_argument("--size", type=int, default=512)
    w.add_argument("--footprints", type=int, default=30000)
    w.add_argument("--plots", type=int, default=12)
    w.add_argument("--outlier-fraction", type=float, default=0.1)
    w.add_argument("--quality-fail-fraction", type=float, default=0.03)
    w.add_argument("--seed", type=int, default=0)
    w.set_defaults(func=_cmd_synth_world)

    bench = sub.add_parser("bench", help="learner timing, optional backend duel")
    bench.add_argument("--n", type=int, default=100000)
    bench.add_argument("--p", type=int, default=25)
    bench.add_argument("--trees", type=int, default=100)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--threads", type=int, default=1)
    bench.add_argument("--learners", default="gbdt,random_forest")
    bench.add_argument("--backends",
                       help="comma-separated; compare and verify equal models")
    bench.add_argument("--out")
    bench.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ValidationError as exc:
        log_event("validation-error", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        log_event("stage-error", stage=exc.stage, error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
