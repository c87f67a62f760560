"""End-to-end orchestration: data -> train -> attribute -> evaluate -> report.

Every stage writes into a stable run-directory layout

    data/        PGM pairs + manifest.csv
    model/       model.atm (ATTRIBMDL)
    heatmaps/<estimator>/<variant>/NNN.ahm
    curves/      <estimator>__<variant>__{perturbation,roc,dsc}.csv
    report/      tables (CSV + aligned text) and SVG plots

and records a content hash of the config subset it depends on; re-running
with an unchanged config reuses the existing outputs.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .config import RunConfig
from .data import Dataset, generate_dataset, load_dataset, write_dataset
from .errors import SaliencyBenchError, StageError
from .estimators import (PATH_METHODS, compute_heatmap, postprocess,
                         read_heatmap, write_heatmap)
from .metrics import (auc, dsc_curve, fidelity, perturbation_curves,
                      roc_curve_mean)
from .model import TrainedModel, load_model, predict_class, save_model, train
from .segmentation import felzenszwalb_segment

METRIC_NAMES = ("fidelity", "roc", "dsc")


def _stage_marker(path: str) -> str:
    return os.path.join(path, ".stage_hash")


def _stage_fresh(stage_dir: str, stage_hash: str, sentinel: str) -> bool:
    marker = _stage_marker(stage_dir)
    if not (os.path.exists(marker) and os.path.exists(sentinel)):
        return False
    with open(marker) as fh:
        return fh.read().strip() == stage_hash


def _write_marker(stage_dir: str, stage_hash: str) -> None:
    with open(_stage_marker(stage_dir), "w") as fh:
        fh.write(stage_hash + "\n")


def _map_ordered(fn, items, jobs: int):
    """Per-item work with a bounded worker pool; results keep input order."""
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _fmt(value: float) -> str:
    return f"{value:.12g}"


def _write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if isinstance(v, float) else v for v in row])


# ---------------------------------------------------------------------------
# stages

def ensure_data(cfg: RunConfig) -> Dataset:
    data_dir = os.path.join(cfg.out_dir, "data")
    manifest = os.path.join(data_dir, "manifest.csv")
    h = cfg.stage_hash("data")
    if _stage_fresh(data_dir, h, manifest):
        return load_dataset(manifest)
    dataset = generate_dataset(cfg.scene_params(),
                               cfg.n_train + cfg.n_test,
                               balance=cfg.balance,
                               n_test=cfg.n_test, n_eval=cfg.n_eval)
    write_dataset(dataset, data_dir)
    _write_marker(data_dir, h)
    return dataset


def ensure_model(cfg: RunConfig, dataset: Dataset) -> TrainedModel:
    model_dir = os.path.join(cfg.out_dir, "model")
    model_path = os.path.join(model_dir, "model.atm")
    h = cfg.stage_hash("train")
    if _stage_fresh(model_dir, h, model_path):
        return load_model(model_path)
    os.makedirs(model_dir, exist_ok=True)
    test_idx = dataset.indices("test") + dataset.indices("eval")
    test_images = np.stack([dataset.samples[i].image for i in test_idx])
    test_labels = np.array([dataset.samples[i].label for i in test_idx])
    model = train(dataset.images("train"), dataset.labels("train"),
                  test_images, test_labels, cfg.model_config())
    save_model(model, model_path)
    _write_marker(model_dir, h)
    return model


def _heatmap_dir(cfg: RunConfig, estimator: str, variant: str) -> str:
    return os.path.join(cfg.out_dir, "heatmaps", estimator, variant)


def _image_seed(stage_seed: int, estimator: str, index: int) -> int:
    import zlib
    seq = np.random.SeedSequence((stage_seed, zlib.crc32(estimator.encode()), index))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> 1)


def ensure_attributions(cfg: RunConfig, model: TrainedModel, dataset: Dataset) -> None:
    """Heatmaps for every estimator x variant over the eval subset.

    Estimators always score class 1 (the output neuron); the original
    variant applies the targeted sign inversion for path methods when the
    prediction is class 0, the absolute variant additionally takes |e|.
    """
    root = os.path.join(cfg.out_dir, "heatmaps")
    h = cfg.stage_hash("attribute")
    sentinel = os.path.join(root, ".complete")
    if _stage_fresh(root, h, sentinel):
        return
    eval_images = dataset.images("eval")
    predictions = predict_class(model, eval_images)
    pool = dataset.images("train")[:cfg.eg_pool_size]
    attr_seed = cfg.stage_seed("attribute")
    n = eval_images.shape[0]

    variant_ops = {"original": ("sign_invert_if_class0",),
                   "absolute": ("sign_invert_if_class0", "absolute")}
    for estimator in cfg.estimator_names:
        dirs = {}
        for variant in cfg.variants:
            d = _heatmap_dir(cfg, estimator, variant)
            os.makedirs(d, exist_ok=True)
            dirs[variant] = d

        def one(i, estimator=estimator, dirs=dirs):
            params = cfg.estimator_params(_image_seed(attr_seed, estimator, i))
            hm = compute_heatmap(estimator, model, eval_images[i], 1, params, pool)
            for variant, d in dirs.items():
                out = postprocess(hm, variant_ops[variant],
                                  predicted_class=int(predictions[i]))
                write_heatmap(out, os.path.join(d, f"{i:03d}.ahm"))

        _map_ordered(one, range(n), cfg.jobs)
    with open(sentinel, "w") as fh:
        fh.write("ok\n")
    _write_marker(root, h)


def _load_heatmap_stack(cfg: RunConfig, estimator: str, variant: str, n: int) -> np.ndarray:
    d = _heatmap_dir(cfg, estimator, variant)
    return np.stack([read_heatmap(os.path.join(d, f"{i:03d}.ahm")).scores
                     for i in range(n)])


def _curve_path(cfg: RunConfig, estimator: str, variant: str, metric: str) -> str:
    return os.path.join(cfg.out_dir, "curves", f"{estimator}__{variant}__{metric}.csv")


def evaluate(cfg: RunConfig, model: TrainedModel, dataset: Dataset,
             metric_names: tuple[str, ...] = METRIC_NAMES) -> None:
    """Compute the requested metric curves for every estimator x variant."""
    curves_dir = os.path.join(cfg.out_dir, "curves")
    os.makedirs(curves_dir, exist_ok=True)
    images = dataset.images("eval")
    labels = dataset.labels("eval")
    masks = dataset.masks("eval")
    n = images.shape[0]

    region_maps = None
    if "dsc" in metric_names:
        felz = cfg.felz_params()
        region_maps = _map_ordered(
            lambda i: felzenszwalb_segment(images[i], felz), range(n), cfg.jobs)

    for estimator in cfg.estimator_names:
        for variant in cfg.variants:
            heatmaps = _load_heatmap_stack(cfg, estimator, variant, n)
            if "fidelity" in metric_names:
                mif = perturbation_curves(model, images, labels, heatmaps,
                                          "mif", cfg.fraction_step)
                lif = perturbation_curves(model, images, labels, heatmaps,
                                          "lif", cfg.fraction_step)
                _write_csv(_curve_path(cfg, estimator, variant, "perturbation"),
                           ["fraction", "acc_mif", "acc_lif"],
                           zip(mif.fractions.tolist(), mif.accuracies.tolist(),
                               lif.accuracies.tolist()))
            if "roc" in metric_names:
                lo = heatmaps.min(axis=(1, 2), keepdims=True)
                hi = heatmaps.max(axis=(1, 2), keepdims=True)
                span = np.where(hi > lo, hi - lo, 1.0)
                normalized = np.where(hi > lo, (heatmaps - lo) / span, 0.0)
                roc = roc_curve_mean(normalized, masks, cfg.threshold_count)
                _write_csv(_curve_path(cfg, estimator, variant, "roc"),
                           ["threshold", "mean_fpr", "mean_tpr"],
                           zip(roc.thresholds.tolist(), roc.mean_fpr.tolist(),
                               roc.mean_tpr.tolist()))
            if "dsc" in metric_names:
                curve = dsc_curve(heatmaps, images, masks, cfg.felz_params(),
                                  cfg.percent_grid, region_maps=region_maps)
                _write_csv(_curve_path(cfg, estimator, variant, "dsc"),
                           ["percent", "mean_dsc"],
                           zip(curve.percents.tolist(), curve.mean_dsc.tolist()))


# ---------------------------------------------------------------------------
# report

def _read_curve(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    arr = np.asarray(rows)
    return {name: arr[:, i] for i, name in enumerate(header)}


def _score_tables(cfg: RunConfig) -> dict[str, dict[tuple[str, str], float]]:
    """Scalar score per (estimator, variant) for each table."""
    tables: dict[str, dict[tuple[str, str], float]] = {
        "fidelity": {}, "auc": {}, "auc_trapezoid": {}, "dsc_max": {}}
    from .metrics import PerturbationCurve, RocCurve
    missing = []
    for estimator in cfg.estimator_names:
        for variant in cfg.variants:
            for metric in ("perturbation", "roc", "dsc"):
                path = _curve_path(cfg, estimator, variant, metric)
                if not os.path.exists(path):
                    missing.append(path)
                    continue
                cols = _read_curve(path)
                key = (estimator, variant)
                if metric == "perturbation":
                    mif = PerturbationCurve(cols["fraction"], cols["acc_mif"], "mif")
                    lif = PerturbationCurve(cols["fraction"], cols["acc_lif"], "lif")
                    tables["fidelity"][key] = fidelity(mif, lif)
                elif metric == "roc":
                    roc = RocCurve(cols["threshold"], cols["mean_fpr"], cols["mean_tpr"])
                    tables["auc"][key] = auc(roc, "mean_tpr")
                    tables["auc_trapezoid"][key] = auc(roc, "trapezoid")
                else:
                    tables["dsc_max"][key] = float(cols["mean_dsc"].max())
    if missing:
        raise StageError("report inputs missing: " + ", ".join(missing))
    return tables


def _write_table(path_base: str, title: str, cfg: RunConfig,
                 scores: dict[tuple[str, str], float]) -> None:
    sort_variant = "absolute" if "absolute" in cfg.variants else cfg.variants[0]
    rows = sorted(cfg.estimator_names,
                  key=lambda e: -scores.get((e, sort_variant), float("-inf")))
    headers = ["estimator"] + [v.capitalize() for v in cfg.variants]
    table = [[e] + [_fmt(scores[(e, v)]) for v in cfg.variants] for e in rows]
    with open(path_base + ".csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        writer.writerows(table)
    widths = [max(len(str(r[i])) for r in [headers] + table) for i in range(len(headers))]
    with open(path_base + ".txt", "w") as fh:
        fh.write(title + "\n")
        for row in [headers] + table:
            fh.write("  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip() + "\n")


def _plot_curves(cfg: RunConfig, report_dir: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    # fixed hash salt: SVG element ids become content-derived, keeping
    # repeated runs byte-identical
    matplotlib.rcParams["svg.hashsalt"] = "saliencybench"
    import matplotlib.pyplot as plt

    for estimator in cfg.estimator_names:
        for variant in cfg.variants:
            tag = f"{estimator}__{variant}"
            pert = _read_curve(_curve_path(cfg, estimator, variant, "perturbation"))
            fig, ax = plt.subplots(figsize=(5, 4))
            ax.plot(pert["fraction"], pert["acc_mif"], label="MiF")
            ax.plot(pert["fraction"], pert["acc_lif"], label="LiF")
            ax.set_xlabel("masked pixel fraction")
            ax.set_ylabel("balanced accuracy")
            ax.set_title(tag)
            ax.legend()
            fig.savefig(os.path.join(report_dir, f"{tag}__perturbation.svg"),
                        metadata={"Date": None})
            plt.close(fig)

            roc = _read_curve(_curve_path(cfg, estimator, variant, "roc"))
            fig, ax = plt.subplots(figsize=(4.5, 4.5))
            ax.plot(roc["mean_fpr"], roc["mean_tpr"])
            ax.plot([0, 1], [0, 1], ls="--", c="gray")
            ax.set_xlabel("mean FPR")
            ax.set_ylabel("mean TPR")
            ax.set_title(tag)
            fig.savefig(os.path.join(report_dir, f"{tag}__roc.svg"),
                        metadata={"Date": None})
            plt.close(fig)

            dsc_cols = _read_curve(_curve_path(cfg, estimator, variant, "dsc"))
            fig, ax = plt.subplots(figsize=(5, 4))
            ax.plot(dsc_cols["percent"], dsc_cols["mean_dsc"], marker="o")
            ax.set_xscale("log")
            ax.set_xlabel("revealed region percentage (log scale)")
            ax.set_ylabel("mean DSC")
            ax.set_title(tag)
            fig.savefig(os.path.join(report_dir, f"{tag}__dsc.svg"),
                        metadata={"Date": None})
            plt.close(fig)


def emit_report(cfg: RunConfig) -> None:
    report_dir = os.path.join(cfg.out_dir, "report")
    os.makedirs(report_dir, exist_ok=True)
    tables = _score_tables(cfg)
    _write_table(os.path.join(report_dir, "fidelity"),
                 "Fidelity F (area between LiF and MiF curves)", cfg, tables["fidelity"])
    _write_table(os.path.join(report_dir, "auc"),
                 "ROC AUC (mean of TPR heights)", cfg, tables["auc"])
    _write_table(os.path.join(report_dir, "auc_trapezoid"),
                 "ROC AUC (trapezoidal over FPR)", cfg, tables["auc_trapezoid"])
    _write_table(os.path.join(report_dir, "dsc_max"),
                 "Maximum mean DSC over the percentage grid", cfg, tables["dsc_max"])
    _plot_curves(cfg, report_dir)


# ---------------------------------------------------------------------------
# manifest + full run

def _collect_paths(cfg: RunConfig) -> list[str]:
    paths = []
    for root, _, files in os.walk(cfg.out_dir):
        for name in sorted(files):
            if name in ("run_manifest.json", ".stage_hash", ".complete"):
                continue
            paths.append(os.path.relpath(os.path.join(root, name), cfg.out_dir))
    return sorted(paths)


def _write_manifest(cfg: RunConfig, status: str, failed_stage: str | None = None) -> dict:
    manifest = {
        "config_hash": cfg.config_hash(),
        "tool_version": __version__,
        "status": status,
        "failed_stage": failed_stage,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "artifacts": _collect_paths(cfg),
    }
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "run_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def run_pipeline(cfg: RunConfig) -> dict:
    """All stages in order; deterministic given the master seed.

    On failure the partial manifest is persisted with status 'incomplete'
    and a StageError naming the stage is raised.
    """
    stage = "data"
    try:
        dataset = ensure_data(cfg)
        stage = "train"
        model = ensure_model(cfg, dataset)
        stage = "attribute"
        ensure_attributions(cfg, model, dataset)
        stage = "eval"
        evaluate(cfg, model, dataset)
        stage = "report"
        emit_report(cfg)
    except SaliencyBenchError as exc:
        _write_manifest(cfg, "incomplete", stage)
        raise StageError(f"stage '{stage}' failed: {exc}") from exc
    return _write_manifest(cfg, "complete")
