"""Command-line pipeline: synth, train, explain, analyze, eval-xai.

Configuration lives in a JSON document; ``--set dotted.key=value`` flags
override file keys. The effective config is echoed into the output directory
for provenance. Every command validates its configuration fully before
touching the filesystem, and reruns with identical config and seed produce
byte-identical outputs regardless of ``--threads``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import analysis, rng as rngmod, training
from .attribution import (
    METHOD_NAMES,
    AttributionConfig,
    FieldAttribution,
    attribute,
    compute_dataset_mean,
    load_field_attribution,
    mean_baseline,
    padded_baseline,
    save_field_attribution,
    stack_field_attribution,
)
from .data import (
    DatasetManifest,
    FieldRaster,
    SyntheticSpec,
    TimeSeriesSample,
    generate_synthetic_dataset,
    load_manifest,
    select_fields_for_explanation,
    split_cross_validation,
)
from .errors import ConfigError, DataError, NumericError, TsattrError
from .lstm import LstmRegressor, load_checkpoint, save_checkpoint
from .preprocess import FeatureStats, apply_feature_stats, clean_yield_map, raster_vegetation_indices
from .xai_eval import EvalConfig, compare_methods

DEFAULTS: dict[str, Any] = {
    "seed": None,                      # falls back to $TSATTR_SEED, then 0
    "threads": 1,
    "output_dir": "tsattr_out",
    "dataset": {
        "manifest": None,              # path to manifest.json
        "synthetic": None,             # SyntheticSpec fields (see synth --help)
    },
    "sampling": {"mode": "monthly", "raw_length": 150, "monthly_length": 24},
    "features": "s2",                  # s2 | s2_ads | vi
    "training": {
        "folds": 10,
        "epochs": 12,
        "batch_size": 256,
        "learning_rate": 1e-3,
        "hidden_size": 128,
        "n_layers": 2,
        "dropout_rate": 0.3,
        "train_folds": None,
        "clean": True,
        "hard_threshold": 15.0,
    },
    "explain": {
        "fold": None,                  # None -> best fold by field-level R^2
        "max_fields_per_farm": 5,
        "max_pixels_per_field": None,  # None -> all pixels
    },
    "attribution": {
        "method": "shapley_value_sampling",
        "baseline": "mean_adapted",    # mean_adapted | padded
        "svs_samples": 25,
        "ig_steps": 64,
        "ig_rule": "right",
        "gradshap_samples": 32,
        "gradshap_sigma": 0.1,
        "occlusion_window": [1, 1],
        "lime_samples": 1000,
        "lime_kernel_width": None,
        "lime_ridge": 1e-6,
        "kernelshap_samples": None,
    },
    "analysis": {
        "growth_stages": True,
        "top_k_std": 5,
        "distance_metric": "euclidean",   # euclidean | cosine
        "pca_max_pixels": 2000,
    },
    "eval": {
        "methods": ["saliency", "integrated_gradients", "occlusion", "shapley_value_sampling"],
        "baselines": ["mean_adapted"],
        "max_pixels": 16,
        "map_feature": None,           # [band_index, step_index]
        "infid_perturbation": "gaussian",
        "infid_sigma": 0.1,
        "infid_samples": 128,
        "sens_radius": 0.02,
        "sens_samples": 32,
        "sens_norm": "l2",
    },
}

BASELINE_KINDS = ("mean_adapted", "padded")


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def _deep_merge(base: Mapping, override: Mapping) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _apply_set(cfg: dict, expr: str) -> None:
    if "=" not in expr:
        raise ConfigError(f"--set expects dotted.key=value, got {expr!r}")
    dotted, raw = expr.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = dotted.split(".")
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value


def load_config(args: argparse.Namespace) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))  # deep copy
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            cfg = _deep_merge(cfg, json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    for expr in args.set or []:
        _apply_set(cfg, expr)
    if args.output_dir:
        cfg["output_dir"] = args.output_dir
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.threads is not None:
        cfg["threads"] = args.threads
    if cfg["seed"] is None:
        cfg["seed"] = int(os.environ.get("TSATTR_SEED", "0"))
    cfg["seed"] = int(cfg["seed"])
    cfg["threads"] = int(cfg["threads"])
    if cfg["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    return cfg


def validate_config(cfg: dict, command: str) -> None:
    dataset = cfg["dataset"]
    sources = [k for k in ("manifest", "synthetic") if dataset.get(k)]
    if command != "synth" and len(sources) != 1:
        raise ConfigError("exactly one dataset source (manifest or synthetic) is required")
    if command == "synth" and not dataset.get("synthetic"):
        raise ConfigError("synth needs dataset.synthetic settings")
    if cfg["features"] not in ("s2", "s2_ads", "vi"):
        raise ConfigError(f"unknown features setting {cfg['features']!r}")
    if cfg["features"] == "s2_ads" and cfg["sampling"]["mode"] != "monthly":
        raise ConfigError("additional modalities require monthly sampling")
    if cfg["sampling"]["mode"] not in ("raw_ts", "monthly"):
        raise ConfigError(f"unknown sampling mode {cfg['sampling']['mode']!r}")
    attr = cfg["attribution"]
    if attr["method"] not in METHOD_NAMES:
        raise ConfigError(f"unknown attribution method {attr['method']!r}")
    if attr["baseline"] not in BASELINE_KINDS:
        raise ConfigError(f"unknown baseline kind {attr['baseline']!r}")
    for m in cfg["eval"]["methods"]:
        if m not in METHOD_NAMES:
            raise ConfigError(f"unknown attribution method {m!r}")
    for b in cfg["eval"]["baselines"]:
        if b not in BASELINE_KINDS:
            raise ConfigError(f"unknown baseline kind {b!r}")
    if cfg["analysis"]["distance_metric"] not in ("euclidean", "cosine"):
        raise ConfigError("distance_metric must be euclidean or cosine")
    # Constructing the typed configs runs their own validation early.
    attribution_config(cfg)
    eval_config(cfg)
    if command in ("train", "explain", "analyze", "eval-xai"):
        training_config(cfg)


def attribution_config(cfg: dict) -> AttributionConfig:
    a = cfg["attribution"]
    return AttributionConfig(
        svs_samples=int(a["svs_samples"]),
        ig_steps=int(a["ig_steps"]),
        ig_rule=a["ig_rule"],
        gradshap_samples=int(a["gradshap_samples"]),
        gradshap_sigma=float(a["gradshap_sigma"]),
        occlusion_window=tuple(int(v) for v in a["occlusion_window"]),
        lime_samples=int(a["lime_samples"]),
        lime_kernel_width=None if a["lime_kernel_width"] is None else float(a["lime_kernel_width"]),
        lime_ridge=float(a["lime_ridge"]),
        kernelshap_samples=None if a["kernelshap_samples"] is None else int(a["kernelshap_samples"]),
        seed=cfg["seed"],
    )


def eval_config(cfg: dict) -> EvalConfig:
    e = cfg["eval"]
    return EvalConfig(
        infid_perturbation=e["infid_perturbation"],
        infid_sigma=float(e["infid_sigma"]),
        infid_samples=int(e["infid_samples"]),
        sens_radius=float(e["sens_radius"]),
        sens_samples=int(e["sens_samples"]),
        sens_norm=e["sens_norm"],
        seed=cfg["seed"],
    )


def training_config(cfg: dict) -> training.TrainingConfig:
    t = cfg["training"]
    return training.TrainingConfig(
        folds=int(t["folds"]),
        epochs=int(t["epochs"]),
        batch_size=int(t["batch_size"]),
        learning_rate=float(t["learning_rate"]),
        hidden_size=int(t["hidden_size"]),
        n_layers=int(t["n_layers"]),
        dropout_rate=float(t["dropout_rate"]),
        seed=cfg["seed"],
        train_folds=None if t["train_folds"] is None else tuple(int(f) for f in t["train_folds"]),
        clean=bool(t["clean"]),
        hard_threshold=float(t["hard_threshold"]),
    )


# ---------------------------------------------------------------------------
# Deterministic writers
# ---------------------------------------------------------------------------


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, fieldnames: Sequence[str], rows: Sequence[Mapping[str, Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_fmt(row.get(name, "")) for name in fieldnames])


def write_json(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def echo_config(cfg: dict, out: Path) -> None:
    write_json(out / "config.json", cfg)


# ---------------------------------------------------------------------------
# Shared pipeline steps
# ---------------------------------------------------------------------------


def resolve_manifest(cfg: dict) -> DatasetManifest:
    dataset = cfg["dataset"]
    if dataset.get("manifest"):
        return load_manifest(dataset["manifest"])
    path = Path(cfg["output_dir"]) / "dataset" / "manifest.json"
    if not path.is_file():
        raise DataError(f"no dataset at {path}; run the synth command first")
    return load_manifest(path)


def prepare_raster(raster: FieldRaster, cfg: dict) -> FieldRaster:
    """Cleaning plus the configured feature transform, as used for training."""
    t = cfg["training"]
    if t["clean"]:
        raster = clean_yield_map(raster, float(t["hard_threshold"]))
    if cfg["features"] == "vi":
        missing = [b for b in ("B02", "B03", "B04", "B05", "B06", "B08")
                   if b not in raster.band_labels]
        if missing:
            raise DataError(f"vegetation indices need bands {missing}")
        raster = raster_vegetation_indices(raster)
    elif cfg["features"] == "s2_ads":
        if not any(":" in label for label in raster.band_labels):
            raise DataError("features=s2_ads expects rasters with fused, prefixed band labels")
    return raster


def _check_sampling(cfg: dict, manifest: DatasetManifest) -> None:
    sampling = cfg["sampling"]
    expected = sampling["monthly_length"] if sampling["mode"] == "monthly" else sampling["raw_length"]
    raster = manifest.load_raster(manifest.entries[0])
    if raster.n_steps != int(expected):
        raise DataError(
            f"rasters have {raster.n_steps} steps but sampling mode "
            f"{sampling['mode']!r} expects {expected}"
        )


def _checkpoint_path(out: Path, fold: int) -> Path:
    return out / "metrics" / f"fold{fold:02d}.ckpt"


def _load_fold(cfg: dict, fold: int | None) -> tuple[int, LstmRegressor, FeatureStats, dict]:
    out = Path(cfg["output_dir"])
    summary_path = out / "metrics" / "training.json"
    if not summary_path.is_file():
        raise DataError(f"no training summary at {summary_path}; run the train command first")
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    if fold is None:
        fold = int(summary["best_fold"])
    path = _checkpoint_path(out, fold)
    if not path.is_file():
        raise DataError(f"missing checkpoint {path}; train fold {fold} first")
    params, extra = load_checkpoint(path)
    stats = FeatureStats.from_json(extra["stats"])
    return fold, LstmRegressor(params), stats, extra


def _standardized_field(raster: FieldRaster, stats: FeatureStats):
    values, pads, yields = raster.pixel_matrix()
    std_values = apply_feature_stats(values, pads, stats, raster.pad_value)
    return std_values, pads, yields


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: dict) -> int:
    out = Path(cfg["output_dir"])
    spec_dict = dict(cfg["dataset"]["synthetic"])
    spec_dict.setdefault("seed", cfg["seed"])
    try:
        spec = SyntheticSpec(**spec_dict)
    except TypeError as exc:
        raise ConfigError(f"bad synthetic spec: {exc}") from exc
    echo_config(cfg, out)
    manifest, _ = generate_synthetic_dataset(spec, out / "dataset")
    print(out / "dataset" / "manifest.json")
    return 0


def cmd_train(cfg: dict) -> int:
    manifest = resolve_manifest(cfg)
    _check_sampling(cfg, manifest)
    tc = training_config(cfg)
    out = Path(cfg["output_dir"])
    echo_config(cfg, out)
    splits = split_cross_validation(manifest, tc.folds, cfg["seed"])
    dataset = training.assemble_pixels(
        manifest, clean=False, transform=lambda r: prepare_raster(r, cfg)
    )
    results = training.train_cross_validation(dataset, splits, tc)
    best_idx = training.select_best_fold([r.metrics for r in results])
    best_fold = results[best_idx].fold

    rows = []
    fold_summaries = []
    for r in results:
        save_checkpoint(r.params, _checkpoint_path(out, r.fold), meta={
            "fold": r.fold,
            "stats": r.stats.to_json(),
            "band_labels": list(dataset.band_labels),
            "val_keys": list(r.val_keys),
            "metrics": r.metrics,
            "features": cfg["features"],
        })
        for level in ("subfield", "field"):
            m = r.metrics[level]
            rows.append({
                "fold": r.fold, "level": level, "mae": m["mae"], "r2": m["r2"],
                "rmse": m["rmse"], "best": int(r.fold == best_fold),
            })
        fold_summaries.append({
            "fold": r.fold,
            "val_keys": list(r.val_keys),
            "metrics": r.metrics,
            "loss_history": r.loss_history,
        })
    write_csv(out / "metrics" / "metrics.csv",
              ["fold", "level", "mae", "r2", "rmse", "best"], rows)
    write_json(out / "metrics" / "training.json",
               {"best_fold": best_fold, "folds": fold_summaries})
    print(out / "metrics" / "metrics.csv")
    return 0


def _selected_fields(cfg: dict, manifest: DatasetManifest, val_keys: Sequence[str]) -> list[str]:
    """Fields to explain: the per-farm capped pick among the fold's validation fields."""
    entries = tuple(e for e in manifest.entries if e.key() in set(val_keys))
    if not entries:
        raise DataError("the chosen fold has no validation fields in the manifest")
    sub = DatasetManifest(
        name=manifest.name, crop=manifest.crop, entries=entries,
        growth_stage_schedules={
            k: v for k, v in manifest.growth_stage_schedules.items()
            if k in {e.key() for e in entries}
        },
        root=manifest.root,
    )
    return select_fields_for_explanation(
        sub, int(cfg["explain"]["max_fields_per_farm"]), cfg["seed"]
    )


def cmd_explain(cfg: dict) -> int:
    manifest = resolve_manifest(cfg)
    fold, model, stats, extra = _load_fold(cfg, cfg["explain"]["fold"])
    if extra.get("features") != cfg["features"]:
        raise ConfigError(
            f"checkpoint was trained with features={extra.get('features')!r}, "
            f"config says {cfg['features']!r}"
        )
    out = Path(cfg["output_dir"])
    echo_config(cfg, out)
    keys = _selected_fields(cfg, manifest, extra["val_keys"])
    attr_cfg = attribution_config(cfg)
    method = cfg["attribution"]["method"]
    baseline_kind = cfg["attribution"]["baseline"]
    cap = cfg["explain"]["max_pixels_per_field"]

    fields = []
    for key in keys:
        raster = prepare_raster(manifest.load_raster(key), cfg)
        if cap is not None and raster.n_pixels > int(cap):
            coords = raster.pixel_coords()
            rng = rngmod.stream(cfg["seed"], "explain-pixels", key)
            pick = rng.choice(coords.shape[0], size=int(cap), replace=False)
            keep = np.zeros(raster.grid_shape, dtype=bool)
            for i in sorted(pick):
                keep[tuple(coords[i])] = True
            raster = raster.drop_cells(keep)
        fields.append((key, raster))

    all_values = np.concatenate([_standardized_field(r, stats)[0] for _, r in fields])
    all_pads = np.concatenate([r.pixel_matrix()[1] for _, r in fields])
    dmean = compute_dataset_mean(all_values, all_pads)

    (out / "attributions").mkdir(parents=True, exist_ok=True)
    counts = {}
    for key, raster in fields:
        std_values, pads, _ = _standardized_field(raster, stats)
        coords = raster.pixel_coords()
        pixel_ids = [f"{key}:{r}:{c}" for r, c in coords]

        def one(i: int):
            sample = TimeSeriesSample(
                values=std_values[i], pad_mask=pads[i],
                band_labels=raster.band_labels, pad_value=raster.pad_value,
            )
            baseline = (mean_baseline(dmean, sample) if baseline_kind == "mean_adapted"
                        else padded_baseline(sample.n_bands, sample.n_steps, sample.pad_value))
            return attribute(method, model, sample, baseline, attr_cfg,
                             pixel_id=pixel_ids[i], field_key=key)

        indices = list(range(len(pixel_ids)))
        if cfg["threads"] > 1:
            with ThreadPoolExecutor(max_workers=cfg["threads"]) as pool:
                tensors = list(pool.map(one, indices))
        else:
            tensors = [one(i) for i in indices]
        field_id, season = key.split(":", 1)
        fa = stack_field_attribution(
            field_id, season, raster.presence, raster.band_labels, tensors,
            extra={"fold": fold, "method": method, "baseline": baseline_kind},
        )
        path = out / "attributions" / f"{field_id}_{season}.atr"
        save_field_attribution(fa, path)
        counts[key] = fa.n_pixels
    write_json(out / "attributions" / "explain.json", {
        "fold": fold, "method": method, "baseline": baseline_kind,
        "fields": counts,
    })
    print(out / "attributions")
    return 0


def _load_attributions(out: Path) -> list[FieldAttribution]:
    paths = sorted((out / "attributions").glob("*.atr"))
    if not paths:
        raise DataError(f"no .atr files under {out / 'attributions'}; run explain first")
    return [load_field_attribution(p) for p in paths]


def cmd_analyze(cfg: dict) -> int:
    out = Path(cfg["output_dir"])
    manifest = resolve_manifest(cfg)
    attributions = _load_attributions(out)
    explain_meta = json.loads((out / "attributions" / "explain.json").read_text(encoding="utf-8"))
    fold, model, stats, _ = _load_fold(cfg, explain_meta["fold"])
    echo_config(cfg, out)
    reports = out / "reports"
    metric = cfg["analysis"]["distance_metric"]
    top_k = int(cfg["analysis"]["top_k_std"])

    spectral_rows, temporal_rows, stage_rows = [], [], []
    std_rows, top_rows, cosine_rows, modality_rows = [], [], [], []
    field_si, field_ti, field_stage = {}, {}, {}
    pixel_counts = {}
    per_field_r2 = {}
    pca_inputs: dict[str, list[tuple[str, str, np.ndarray]]] = {"time_steps": [], "growth_stage": []}
    conservation = []

    fused = all(":" in label for label in attributions[0].band_labels)
    want_stages = bool(cfg["analysis"]["growth_stages"])

    for fa in attributions:
        key = fa.key()
        pixel_counts[key] = fa.n_pixels
        band_labels = fa.band_labels
        si_list = [analysis.spectral_importance(a, band_labels) for a in fa.absolute]
        ti_list = [analysis.temporal_importance(a) for a in fa.absolute]
        field_si[key] = analysis.average_importance(si_list, "field")
        field_ti[key] = analysis.average_importance(ti_list, "field")

        schedule = manifest.schedule_for(key)
        if want_stages:
            if schedule is None:
                raise ConfigError(f"growth-stage aggregation requested but no schedule for {key}")
            stage_list = [analysis.aggregate_growth_stages(a, schedule) for a in fa.absolute]
            field_stage[key] = analysis.average_importance(stage_list, "field")
            for label, value in zip(field_stage[key].labels, field_stage[key].values):
                stage_rows.append({"scope": key, "stage": label, "value": value})
            conservation.append({
                "field": key,
                "total_absolute": analysis.conservation_total(fa.absolute[0]),
                "total_si": si_list[0].total(),
                "total_ti": ti_list[0].total(),
                "total_stages": stage_list[0].total(),
            })
        for label, value in zip(band_labels, field_si[key].values):
            spectral_rows.append({"scope": key, "band": label, "value": value})
        for label, value in zip(field_ti[key].labels, field_ti[key].values):
            temporal_rows.append({"scope": key, "step": label, "value": value})

        if fused:
            shares = analysis.modality_share(fa.absolute.mean(axis=0), band_labels)
            for label, value in zip(shares.labels, shares.values):
                modality_rows.append({"scope": key, "modality": label, "value": value})

        if fa.n_pixels >= 2:
            sigma, top = analysis.attribution_map_std(fa.scaled, top_k)
            for b in range(sigma.shape[0]):
                for t in range(sigma.shape[1]):
                    std_rows.append({"field": key, "band": band_labels[b],
                                     "step": t, "sigma": sigma[b, t]})
            for rank, (b, t) in enumerate(top):
                top_rows.append({"field": key, "rank": rank, "band": band_labels[b],
                                 "step": t, "sigma": sigma[b, t]})

        # Per-field model performance for the correlation analysis.
        raster = prepare_raster(manifest.load_raster(key), cfg)
        raster = raster.drop_cells(fa.presence)
        std_values, _, yields = _standardized_field(raster, stats)
        preds = training.predict_batched(model.params, std_values)
        per_field_r2[key] = training.per_field_r2(
            preds, yields, [key] * yields.size
        )[key]

        pca_rng = rngmod.stream(cfg["seed"], "pca", key)
        max_px = int(cfg["analysis"]["pca_max_pixels"])
        take = min(fa.n_pixels, max(1, max_px // len(attributions)))
        chosen = sorted(pca_rng.choice(fa.n_pixels, size=take, replace=False).tolist())
        ids = fa.pixel_ids()
        for i in chosen:
            ti = analysis.temporal_importance(fa.absolute[i])
            pca_inputs["time_steps"].append((ids[i], key, ti.values))
            if want_stages and schedule is not None:
                stage = analysis.aggregate_growth_stages(fa.absolute[i], schedule)
                pca_inputs["growth_stage"].append((ids[i], key, stage.values))

    dataset_weights = [pixel_counts[k] for k in sorted(field_si)]
    dataset_si = analysis.average_importance(
        [field_si[k] for k in sorted(field_si)], "dataset", dataset_weights)
    dataset_ti = analysis.average_importance(
        [field_ti[k] for k in sorted(field_ti)], "dataset", dataset_weights)
    for label, value in zip(dataset_si.labels, dataset_si.values):
        spectral_rows.append({"scope": "dataset", "band": label, "value": value})
    for label, value in zip(dataset_ti.labels, dataset_ti.values):
        temporal_rows.append({"scope": "dataset", "step": label, "value": value})
    if want_stages and field_stage:
        dataset_stage = analysis.average_importance(
            [field_stage[k] for k in sorted(field_stage)], "dataset", dataset_weights)
        for label, value in zip(dataset_stage.labels, dataset_stage.values):
            stage_rows.append({"scope": "dataset", "stage": label, "value": value})

    for kind, vectors in (("spectral", field_si), ("temporal", field_ti)):
        reference = analysis.build_reference(
            vectors, per_field_r2, "all_fields", pixel_counts)
        for key in sorted(vectors):
            cosine_rows.append({
                "kind": kind, "field": key,
                "cosine_to_reference": analysis.cosine_similarity(vectors[key], reference.vector),
            })

    kinds = {"time_steps": field_ti}
    if want_stages and field_stage:
        kinds["growth_stage"] = field_stage
    correlation_rows = analysis.correlation_report(
        kinds, per_field_r2, pixel_counts=pixel_counts, metric=metric)

    pca_rows = []
    pca_meta = {}
    for kind, items in pca_inputs.items():
        if len(items) < 3:
            continue
        coords, ratios, _ = analysis.pca_project(np.stack([v for _, _, v in items]), dims=2)
        pca_meta[kind] = {"explained_variance_ratio": ratios.tolist(), "n_points": len(items)}
        for (pixel_id, key, _), xy in zip(items, coords):
            row = {"kind": kind, "pixel_id": pixel_id, "field": key, "x": float(xy[0])}
            row["y"] = float(xy[1]) if xy.size > 1 else 0.0
            pca_rows.append(row)

    write_csv(reports / "spectral_importance.csv", ["scope", "band", "value"], spectral_rows)
    write_csv(reports / "temporal_importance.csv", ["scope", "step", "value"], temporal_rows)
    if stage_rows:
        write_csv(reports / "growth_stage_importance.csv", ["scope", "stage", "value"], stage_rows)
    if modality_rows:
        write_csv(reports / "modality_share.csv", ["scope", "modality", "value"], modality_rows)
    write_csv(reports / "attribution_std.csv", ["field", "band", "step", "sigma"], std_rows)
    write_csv(reports / "attribution_std_top.csv",
              ["field", "rank", "band", "step", "sigma"], top_rows)
    write_csv(reports / "cosine_similarity.csv",
              ["kind", "field", "cosine_to_reference"], cosine_rows)
    write_csv(reports / "correlation_tests.csv",
              ["temporal_dimension", "reference", "n_fields", "pearson_r", "p_value", "error"],
              correlation_rows)
    if pca_rows:
        write_csv(reports / "pca_coordinates.csv",
                  ["kind", "pixel_id", "field", "x", "y"], pca_rows)
    write_json(reports / "report.json", {
        "fold": fold,
        "per_field_r2": per_field_r2,
        "pixel_counts": pixel_counts,
        "conservation": conservation,
        "pca": pca_meta,
    })
    print(reports)
    return 0


def cmd_eval_xai(cfg: dict) -> int:
    out = Path(cfg["output_dir"])
    manifest = resolve_manifest(cfg)
    fold, model, stats, extra = _load_fold(cfg, cfg["explain"]["fold"])
    echo_config(cfg, out)
    keys = _selected_fields(cfg, manifest, extra["val_keys"])
    max_pixels = int(cfg["eval"]["max_pixels"])

    samples: list[tuple[str, TimeSeriesSample]] = []
    per_field = max(1, max_pixels // len(keys))
    for key in keys:
        raster = prepare_raster(manifest.load_raster(key), cfg)
        std_values, pads, _ = _standardized_field(raster, stats)
        coords = raster.pixel_coords()
        rng = rngmod.stream(cfg["seed"], "eval-pixels", key)
        take = min(per_field, coords.shape[0])
        for i in sorted(rng.choice(coords.shape[0], size=take, replace=False).tolist()):
            r, c = coords[i]
            samples.append((
                f"{key}:{r}:{c}",
                TimeSeriesSample(values=std_values[i], pad_mask=pads[i],
                                 band_labels=raster.band_labels, pad_value=raster.pad_value),
            ))
        if len(samples) >= max_pixels:
            samples = samples[:max_pixels]
            break
    if not samples:
        raise DataError("no pixels available for evaluation")

    all_values = np.stack([s.values for _, s in samples])
    all_pads = np.stack([s.pad_mask for _, s in samples])
    dmean = compute_dataset_mean(all_values, all_pads)
    map_feature = cfg["eval"]["map_feature"]
    report = compare_methods(
        samples, model,
        methods=cfg["eval"]["methods"],
        baseline_kinds=cfg["eval"]["baselines"],
        attr_config=attribution_config(cfg),
        eval_config=eval_config(cfg),
        dataset_mean=dmean,
        map_feature=None if map_feature is None else tuple(int(v) for v in map_feature),
        threads=cfg["threads"],
    )
    evaldir = out / "reports" / "eval"
    for kind in cfg["eval"]["baselines"]:
        rows = [s for s in report["scores"] if s["baseline"] == kind]
        write_csv(evaldir / f"scores_{kind}.csv",
                  ["method", "metric", "pixel_id", "value"], rows)
    write_json(evaldir / "summary.json", report["summary"])
    write_csv(evaldir / "importance.csv",
              ["method", "baseline", "axis", "label", "value"], report["importance"])
    if "maps" in report:
        write_csv(evaldir / "maps.csv",
                  ["method", "baseline", "pixel_id", "value"], report["maps"])
    print(evaldir)
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _flatten(prefix: str, node: Any, out: list[str]) -> None:
    if isinstance(node, Mapping):
        for key in node:
            _flatten(f"{prefix}.{key}" if prefix else key, node[key], out)
    else:
        kind = type(node).__name__ if node is not None else "optional"
        out.append(f"  {prefix} ({kind}, default {json.dumps(node)})")


def _build_parser() -> argparse.ArgumentParser:
    keys: list[str] = []
    _flatten("", DEFAULTS, keys)
    epilog = "config keys (override with --set key=value):\n" + "\n".join(keys)
    parser = argparse.ArgumentParser(
        prog="tsattr",
        description="Yield-regression feature-attribution pipeline",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth", "generate a synthetic dataset"),
        ("train", "train the cross-validated LSTM regressor"),
        ("explain", "attribute pixels of the selected fields"),
        ("analyze", "build the attribution-analysis report bundle"),
        ("eval-xai", "compare attribution methods with infidelity/sensitivity"),
    ):
        p = sub.add_parser(name, help=help_text, epilog=epilog,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (dotted path, JSON value)")
        p.add_argument("--output-dir", help="run directory for all outputs")
        p.add_argument("--seed", type=int, help="global seed (or $TSATTR_SEED)")
        p.add_argument("--threads", type=int, help="worker threads for per-pixel work")
    return parser


COMMANDS: dict[str, Callable[[dict], int]] = {
    "synth": cmd_synth,
    "train": cmd_train,
    "explain": cmd_explain,
    "analyze": cmd_analyze,
    "eval-xai": cmd_eval_xai,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        validate_config(cfg, args.command)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except TsattrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
