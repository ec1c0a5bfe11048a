"""Command-line interface: simulate, localize, evaluate, train, predict.

Every command writes a manifest.json capturing the resolved configuration,
seeds, input/output paths, and per-stage timings; the data outputs are
reproducible bit-for-bit from the manifest (timings are metadata and do not
affect outputs).  Exit codes: 0 success, 1 internal/config error, 2
IO/usage error.
"""

from __future__ import annotations

import csv
import functools
import json
import math
import os
import sys
import time
from dataclasses import replace

import click
import numpy as np

from . import __version__, _kernels, classify
from . import evaluate as evaluate_mod
from . import features as features_mod
from . import model as model_mod
from . import pf as pf_mod
from . import synth as synth_mod
from .channel import OMNI_PATTERN
from .evaluate import Cell, GridSpec
from .features import FeatureSelection
from .model import ConfigError, DataError
from .util import derive_seed, write_json_atomic


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        except (DataError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
    return wrapper


@click.group()
@click.option("--seed", type=int, default=None,
              help="Master seed (default: scenario seed / 0).")
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Parallel workers for evaluation cells.")
@click.option("--out", type=click.Path(), default=None,
              help="Output directory or file (command-specific default).")
@click.version_option(__version__)
@click.pass_context
def main(ctx, seed, jobs, out):
    """Fuse RSSI measurements into position estimates and classify zone states."""
    ctx.ensure_object(dict)
    ctx.obj["seed"] = seed
    ctx.obj["jobs"] = max(1, jobs)
    ctx.obj["out"] = out


def _load_scenario_with_synth(path):
    scenario = model_mod.load_scenario(path)
    with open(path) as fh:
        doc = json.load(fh)
    synth_cfg = doc.get("synth", {})
    profile = synth_mod.profile_from_dict(synth_cfg.get("profile", {}))
    noise = synth_mod.noise_from_dict(synth_cfg.get("noise", {}))
    return scenario, profile, noise


def _scenario_from_resolved(resolved: dict) -> model_mod.Scenario:
    """Rebuild a Scenario from the resolved dict stored in a manifest."""
    import tempfile
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(resolved, fh)
        tmp = fh.name
    try:
        return model_mod.load_scenario(tmp)
    finally:
        os.unlink(tmp)


def _out_dir(ctx, default):
    out = ctx.obj.get("out") or default
    os.makedirs(out, exist_ok=True)
    return out


@main.command()
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@_handle_errors
def simulate(ctx, scenario_path):
    """Generate the six-run synthetic dataset (measurements + ground truth)."""
    t0 = time.perf_counter()
    scenario, profile, noise = _load_scenario_with_synth(scenario_path)
    master_seed = ctx.obj["seed"] if ctx.obj["seed"] is not None else 0
    out = _out_dir(ctx, "dataset")

    runs, info = synth_mod.generate_dataset(
        scenario.array, scenario.zone, scenario.channel, profile, noise,
        master_seed, tick_interval_s=scenario.tick_interval_s,
        transmitter_yz=scenario.transmitter_yz)
    outputs = []
    for i, (series, truth) in enumerate(runs):
        mpath = os.path.join(out, f"measurements_{i}.csv")
        gpath = os.path.join(out, f"ground_truth_{i}.csv")
        model_mod.save_measurements(mpath, series, scenario.array)
        model_mod.save_ground_truth(gpath, truth)
        outputs.extend([mpath, gpath])

    manifest = {
        "tool": "rssifuse", "version": __version__, "command": "simulate",
        "backend": _kernels.backend(),
        "master_seed": master_seed,
        "scenario_hash": scenario.hash(),
        "scenario": scenario.raw,
        "profile": synth_mod.profile_to_dict(profile),
        "noise": synth_mod.noise_to_dict(noise),
        "runs": info["runs"],
        "outputs": [os.path.basename(p) for p in outputs],
        "timings_s": {"total": time.perf_counter() - t0},
    }
    write_json_atomic(os.path.join(out, "manifest.json"), manifest)
    click.echo(f"wrote {len(outputs)} CSVs + manifest.json to {out}")


@main.command()
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--measurements", "measurements_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--ground-truth", "truth_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--pattern", type=click.Choice(["directional", "omni"]),
              default="directional", show_default=True,
              help="Antenna model used by the filter.")
@click.option("--burn-in", type=int, default=20, show_default=True)
@click.pass_context
@_handle_errors
def localize(ctx, scenario_path, measurements_path, truth_path, pattern, burn_in):
    """Run the particle filter over a measurement CSV and write estimates."""
    t0 = time.perf_counter()
    scenario = model_mod.load_scenario(scenario_path)
    params = scenario.channel
    if pattern == "omni":
        params = replace(params, pattern=OMNI_PATTERN)
    config = scenario.filter
    if ctx.obj["seed"] is not None:
        config = replace(config, seed=ctx.obj["seed"])

    series = model_mod.load_measurements(measurements_path, scenario.array,
                                         scenario.tick_interval_s)
    track = pf_mod.run(series, scenario.array, params, config,
                       scenario.transmitter_yz)

    out = ctx.obj.get("out") or "estimates.csv"
    if os.path.isdir(out):
        out = os.path.join(out, "estimates.csv")
    pf_mod.save_estimates(out, track)
    summary = {}
    if truth_path:
        truth = model_mod.load_ground_truth(truth_path, scenario.zone)
        rmse = pf_mod.position_rmse(track, truth, burn_in=burn_in)
        summary["rmse_m"] = rmse
        click.echo(f"position RMSE (after {burn_in}-tick burn-in): {rmse:.4f} m")
        labels = truth.label_array()[burn_in:]
        err = track.mu_p()[burn_in:] - truth.p_x()[burn_in:]
        for zone_label, name in ((0, "outside"), (1, "transition"), (2, "inside")):
            mask = labels == zone_label
            if np.any(mask):
                seg = float(np.sqrt(np.mean(err[mask] ** 2)))
                summary[f"rmse_{name}_m"] = seg
                click.echo(f"  {name:>10}: RMSE {seg:.4f} m over {int(mask.sum())} ticks")
    manifest = {
        "tool": "rssifuse", "version": __version__, "command": "localize",
        "backend": _kernels.backend(),
        "scenario_hash": scenario.hash(), "scenario": scenario.raw,
        "pattern": pattern, "seed": config.seed, "burn_in": burn_in,
        "measurements": os.path.abspath(measurements_path),
        "ground_truth": os.path.abspath(truth_path) if truth_path else None,
        "estimates": os.path.abspath(out),
        "summary": summary,
        "timings_s": {"total": time.perf_counter() - t0},
    }
    write_json_atomic(f"{out}.manifest.json", manifest)
    click.echo(f"wrote {out}")


def _load_dataset(dataset_dir):
    manifest_path = os.path.join(dataset_dir, "manifest.json")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DataError(f"dataset manifest not readable: {exc}") from exc
    scenario = _scenario_from_resolved(manifest["scenario"])
    runs = []
    n_runs = len(manifest["runs"])
    for i in range(n_runs):
        series = model_mod.load_measurements(
            os.path.join(dataset_dir, f"measurements_{i}.csv"), scenario.array,
            scenario.tick_interval_s)
        truth = model_mod.load_ground_truth(
            os.path.join(dataset_dir, f"ground_truth_{i}.csv"), scenario.zone)
        if len(series) != len(truth):
            raise DataError(f"run {i}: measurement/truth tick grids differ")
        runs.append((series, truth))
    return scenario, runs, manifest


def _parse_grid(classifiers, scalers, feature_sets, memories, sources):
    return GridSpec(
        classifiers=tuple(classifiers) or evaluate_mod.DEFAULT_CLASSIFIERS,
        scalers=tuple(scalers) or evaluate_mod.DEFAULT_SCALERS,
        feature_sets=tuple(feature_sets) or evaluate_mod.DEFAULT_FEATURE_SETS,
        n_values=tuple(memories) or evaluate_mod.DEFAULT_N_GRID,
        sources=tuple(sources) or evaluate_mod.DEFAULT_SOURCES,
    )


@main.command("evaluate")
@click.option("--dataset", "dataset_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--classifier", "classifiers", multiple=True,
              type=click.Choice(evaluate_mod.DEFAULT_CLASSIFIERS))
@click.option("--scaler", "scalers", multiple=True,
              type=click.Choice(features_mod.SCALER_KINDS))
@click.option("--features", "feature_sets", multiple=True,
              type=click.Choice(evaluate_mod.DEFAULT_FEATURE_SETS))
@click.option("--memory", "memories", multiple=True, type=int)
@click.option("--source", "sources", multiple=True,
              type=click.Choice(evaluate_mod.DEFAULT_SOURCES))
@click.option("--dump-predictions", is_flag=True, default=False,
              help="Dump per-evaluation predictions for every cell.")
@click.option("--window-before-scale", is_flag=True, default=False,
              help="Fit scalers on windowed rows instead of base features.")
@click.pass_context
@_handle_errors
def evaluate_cmd(ctx, dataset_dir, classifiers, scalers, feature_sets, memories,
                 sources, dump_predictions, window_before_scale):
    """Sweep classifiers/scalers/features/memory over the 3-of-6 protocol."""
    t0 = time.perf_counter()
    scenario, runs, dataset_manifest = _load_dataset(dataset_dir)
    master_seed = (ctx.obj["seed"] if ctx.obj["seed"] is not None
                   else dataset_manifest.get("master_seed", 0))
    grid = _parse_grid(classifiers, scalers, feature_sets, memories, sources)
    out = _out_dir(ctx, "evaluation")

    t_prep = time.perf_counter()
    run_features = evaluate_mod.prepare_runs(runs, scenario, master_seed)
    t_sweep = time.perf_counter()
    report = evaluate_mod.run_sweep(
        run_features, grid, master_seed, jobs=ctx.obj["jobs"],
        window_before_scale=window_before_scale,
        dump_cells=True if dump_predictions else None)
    t_done = time.perf_counter()

    header, rows = report.to_rows()
    report_csv = os.path.join(out, "report.csv")
    with open(report_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    write_json_atomic(os.path.join(out, "report.json"), report.to_json_obj())

    if report.predictions:
        pred_dir = os.path.join(out, "predictions")
        os.makedirs(pred_dir, exist_ok=True)
        by_cell = {}
        for (cell_label, triple, test_run), (pred, truth) in report.predictions.items():
            by_cell.setdefault(cell_label, []).append((triple, test_run, pred, truth))
        for cell_label, entries in sorted(by_cell.items()):
            fname = cell_label.replace("|", "_").replace("+", "-") + ".csv"
            with open(os.path.join(pred_dir, fname), "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["triple", "test_run", "row", "truth", "predicted"])
                for triple, test_run, pred, truth in sorted(entries):
                    tname = "-".join(str(t) for t in triple)
                    for row_idx, (t, p) in enumerate(zip(truth, pred)):
                        writer.writerow([tname, test_run, row_idx, int(t), int(p)])

    failed = [r for r in report.cells if r.failed]
    manifest = {
        "tool": "rssifuse", "version": __version__, "command": "evaluate",
        "backend": _kernels.backend(),
        "dataset": os.path.abspath(dataset_dir),
        "dataset_master_seed": dataset_manifest.get("master_seed"),
        "master_seed": master_seed, "jobs": ctx.obj["jobs"],
        "grid": {"classifiers": grid.classifiers, "scalers": grid.scalers,
                 "feature_sets": grid.feature_sets, "n_values": grid.n_values,
                 "sources": grid.sources},
        "window_before_scale": window_before_scale,
        "n_cells": len(report.cells),
        "failed_cells": [r.cell.label() for r in failed],
        "timings_s": {"prepare": t_sweep - t_prep, "sweep": t_done - t_sweep,
                      "total": time.perf_counter() - t0},
    }
    write_json_atomic(os.path.join(out, "manifest.json"), manifest)
    click.echo(f"evaluated {len(report.cells)} cells "
               f"({len(failed)} failed); report in {out}")
    if failed:
        for r in failed:
            click.echo(f"  FAILED {r.cell.label()}: {r.failed}", err=True)


@main.command()
@click.option("--dataset", "dataset_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--runs", "runs_spec", default=None,
              help="Comma-separated run ids to train on (default: all).")
@click.option("--classifier", type=click.Choice(evaluate_mod.DEFAULT_CLASSIFIERS),
              default="svm", show_default=True)
@click.option("--scaler", type=click.Choice(features_mod.SCALER_KINDS),
              default="standard", show_default=True)
@click.option("--features", "features_spec", default="pos+var+vel", show_default=True)
@click.option("--memory", type=int, default=16, show_default=True)
@click.option("--source", type=click.Choice(evaluate_mod.DEFAULT_SOURCES),
              default="filtered", show_default=True)
@click.pass_context
@_handle_errors
def train(ctx, dataset_dir, runs_spec, classifier, scaler, features_spec,
          memory, source):
    """Train one classifier on selected runs and save a model bundle."""
    t0 = time.perf_counter()
    scenario, runs, dataset_manifest = _load_dataset(dataset_dir)
    master_seed = (ctx.obj["seed"] if ctx.obj["seed"] is not None
                   else dataset_manifest.get("master_seed", 0))
    run_ids = (sorted(int(r) for r in runs_spec.split(","))
               if runs_spec else list(range(len(runs))))
    for r in run_ids:
        if not 0 <= r < len(runs):
            raise ConfigError(f"run id {r} out of range (dataset has {len(runs)} runs)")

    selection = FeatureSelection.parse(features_spec, source=source)
    run_features = evaluate_mod.prepare_runs(runs, scenario, master_seed)
    cell = Cell(classifier=classifier, scaler=scaler, features=selection.label(),
                memory=memory, source=source)
    scaler_obj = evaluate_mod.fit_cell_scaler(run_features, run_ids, cell)
    X_parts, y_parts = [], []
    for r in run_ids:
        base = evaluate_mod._base_columns(run_features[r], cell)
        X_parts.append(features_mod.toeplitz_window(
            features_mod.apply_scaler(scaler_obj, base), memory))
        y_parts.append(run_features[r].labels)
    X = np.vstack(X_parts)
    y = np.concatenate(y_parts)
    seed = derive_seed(master_seed, "train", cell.work_key(), tuple(run_ids))
    model = classify.train(classifier, X, y, seed=seed)

    out = ctx.obj.get("out") or "model.json"
    if os.path.isdir(out):
        out = os.path.join(out, "model.json")
    bundle = {
        "tool": "rssifuse", "version": __version__,
        "scenario": scenario.raw, "scenario_hash": scenario.hash(),
        "pipeline": {
            "source": source, "features": selection.label(), "memory": memory,
            "scaler": scaler_obj.to_dict(),
            "pf_seed": derive_seed(master_seed, "pf-predict"),
        },
        "train_runs": run_ids, "master_seed": master_seed,
        "train_accuracy": float(np.mean(classify.predict(model, X) == y)),
        "classifier": classify.model_to_dict(model),
        "timings_s": {"total": time.perf_counter() - t0},
    }
    write_json_atomic(out, bundle)
    click.echo(f"wrote {out} (training accuracy "
               f"{bundle['train_accuracy']:.4f} on {len(y)} rows)")


@main.command()
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--measurements", "measurements_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@_handle_errors
def predict(ctx, model_path, measurements_path):
    """Classify zone states for a measurement CSV using a saved model bundle."""
    try:
        with open(model_path) as fh:
            bundle = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"model bundle {model_path} is not valid JSON: {exc}") from exc
    scenario = _scenario_from_resolved(bundle["scenario"])
    pipeline = bundle["pipeline"]
    model = classify.model_from_dict(bundle["classifier"])
    scaler_obj = features_mod.Scaler.from_dict(pipeline["scaler"])

    series = model_mod.load_measurements(measurements_path, scenario.array,
                                         scenario.tick_interval_s)
    if pipeline["source"] == "filtered":
        config = replace(scenario.filter, seed=pipeline["pf_seed"])
        track = pf_mod.run(series, scenario.array, scenario.channel, config,
                           scenario.transmitter_yz)
        sel = FeatureSelection.parse(pipeline["features"])
        base = features_mod.build_feature_track(track, sel)
    else:
        base = features_mod.build_raw_feature_track(series, scenario.array)
    rows = features_mod.toeplitz_window(
        features_mod.apply_scaler(scaler_obj, base), pipeline["memory"])
    labels = classify.predict(model, rows)

    out = ctx.obj.get("out") or "predictions.csv"
    if os.path.isdir(out):
        out = os.path.join(out, "predictions.csv")
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tick", "label"])
        for tick, label in zip(series.ticks, labels):
            writer.writerow([tick, int(label)])
    click.echo(f"wrote {out} ({len(labels)} labels)")


if __name__ == "__main__":
    main()
