"""Evaluation protocol: train on every 3-of-6 run combination, validate on
each held-out run individually, and sweep classifiers / scalers / feature
sets / memory lengths over both feature sources.

Runs are used whole. Scalers and classifiers only ever see training-run
data (fit happens inside each evaluation task), and every task derives its
own seed from the master seed by stable hashing, so reports are bit-equal
regardless of worker count or completion order.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import classify, features as features_mod, pf as pf_mod
from .features import FeatureSelection
from .model import ConfigError, DataError
from .util import derive_seed

DEFAULT_N_GRID = (1, 2, 3, 4, 6, 8, 12, 16, 24, 32)
DEFAULT_FEATURE_SETS = ("pos", "pos+var", "pos+var+vel")
DEFAULT_SCALERS = ("standard", "power")  # robust available behind a flag
DEFAULT_CLASSIFIERS = ("knn", "rf", "svm")
DEFAULT_SOURCES = ("filtered", "raw")


@dataclass(frozen=True)
class SplitPlan:
    """All 20 unordered training triples over six run ids, lexicographic."""

    run_ids: tuple[int, ...]
    triples: tuple[tuple[int, int, int], ...]

    def held_out(self, triple) -> tuple[int, ...]:
        return tuple(r for r in self.run_ids if r not in triple)

    @property
    def n_evaluations(self) -> int:
        return sum(len(self.held_out(t)) for t in self.triples)


def enumerate_splits(run_ids) -> SplitPlan:
    ids = tuple(run_ids)
    if len(ids) != 6 or len(set(ids)) != 6:
        raise ConfigError(f"expected exactly 6 distinct run ids, got {ids}")
    ids = tuple(sorted(ids))
    triples = tuple(itertools.combinations(ids, 3))
    return SplitPlan(run_ids=ids, triples=triples)


def accuracy(predicted, truth) -> float:
    """Fraction of correctly identified labels."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise DataError(f"length mismatch: {predicted.shape} vs {truth.shape}")
    if predicted.size == 0:
        raise DataError("cannot compute accuracy of empty sequences")
    return float(np.mean(predicted == truth))


# ---------------------------------------------------------------------------
# Sweep grid


@dataclass(frozen=True)
class Cell:
    classifier: str
    scaler: str
    features: str  # "pos", "pos+var", "pos+var+vel", or "raw"
    memory: int
    source: str

    def key(self):
        return (self.classifier, self.scaler, self.features, self.memory, self.source)

    def work_key(self):
        """Computation identity: raw-source cells ignore the feature set."""
        feats = "raw" if self.source == "raw" else self.features
        return (self.classifier, self.scaler, feats, self.memory, self.source)

    def label(self) -> str:
        return "|".join(str(p) for p in self.key())


@dataclass(frozen=True)
class GridSpec:
    classifiers: tuple[str, ...] = DEFAULT_CLASSIFIERS
    scalers: tuple[str, ...] = DEFAULT_SCALERS
    feature_sets: tuple[str, ...] = DEFAULT_FEATURE_SETS
    n_values: tuple[int, ...] = DEFAULT_N_GRID
    sources: tuple[str, ...] = DEFAULT_SOURCES

    def cells(self) -> list[Cell]:
        return [
            Cell(clf, sc, fs, n, src)
            for clf in self.classifiers
            for sc in self.scalers
            for fs in self.feature_sets
            for n in self.n_values
            for src in self.sources
        ]


@dataclass(frozen=True)
class RunFeatures:
    """Precomputed per-run base features (both sources) and labels."""

    filtered: np.ndarray  # (T, 3): mu_p, var_p, mu_v
    raw: np.ndarray       # (T, n_sensors)
    labels: np.ndarray    # (T,)


def prepare_runs(runs, scenario, master_seed: int) -> list[RunFeatures]:
    """Filter every run once and assemble both feature sources.

    The particle filter for run i uses a seed derived from the master seed,
    independent of the scenario's own filter seed, so datasets with the same
    master seed always produce the same estimates.
    """
    out = []
    for i, (series, truth) in enumerate(runs):
        if len(series) != len(truth):
            raise DataError(f"run {i}: measurement/truth grids differ")
        cfg = replace(scenario.filter, seed=derive_seed(master_seed, "pf", i))
        track = pf_mod.run(series, scenario.array, scenario.channel, cfg,
                           scenario.transmitter_yz)
        filtered = np.column_stack([track.mu_p(), track.var_p(), track.mu_v()])
        raw = features_mod.build_raw_feature_track(series, scenario.array)
        out.append(RunFeatures(filtered=filtered, raw=raw,
                               labels=truth.label_array()))
    return out


def _base_columns(run: RunFeatures, cell: Cell) -> np.ndarray:
    if cell.source == "raw":
        return run.raw
    sel = FeatureSelection.parse(cell.features)
    cols = []
    if sel.use_pos_mean:
        cols.append(run.filtered[:, 0])
    if sel.use_pos_var:
        cols.append(run.filtered[:, 1])
    if sel.use_vel_mean:
        cols.append(run.filtered[:, 2])
    return np.column_stack(cols)


def fit_cell_scaler(run_features, triple, cell: Cell,
                    window_before_scale: bool = False):
    """Fit the cell's scaler on the concatenated training-run base features."""
    train_base = np.vstack([_base_columns(run_features[r], cell) for r in triple])
    if window_before_scale:
        train_base = features_mod.toeplitz_window(train_base, cell.memory)
    return features_mod.fit_scaler(cell.scaler, train_base)


def evaluate_cell(run_features, plan: SplitPlan, triple, cell: Cell,
                  master_seed: int, window_before_scale: bool = False,
                  collect_predictions: bool = False):
    """Train on one triple and evaluate each held-out run individually.

    Returns a list of (test_run, accuracy, n_rows, predictions | None).
    """
    scaler = fit_cell_scaler(run_features, triple, cell, window_before_scale)

    def matrix_for(run_id):
        base = _base_columns(run_features[run_id], cell)
        if window_before_scale:
            rows = features_mod.apply_scaler(
                scaler, features_mod.toeplitz_window(base, cell.memory))
        else:
            rows = features_mod.toeplitz_window(
                features_mod.apply_scaler(scaler, base), cell.memory)
        return rows, run_features[run_id].labels

    train_parts = [matrix_for(r) for r in triple]
    X_train = np.vstack([p[0] for p in train_parts])
    y_train = np.concatenate([p[1] for p in train_parts])
    seed = derive_seed(master_seed, "train", cell.work_key(), triple)
    model = classify.train(cell.classifier, X_train, y_train, seed=seed)

    results = []
    for test_run in plan.held_out(triple):
        X_test, y_test = matrix_for(test_run)
        pred = classify.predict(model, X_test)
        results.append((test_run, accuracy(pred, y_test), int(y_test.shape[0]),
                        pred if collect_predictions else None))
    return results


@dataclass(frozen=True)
class CellResult:
    cell: Cell
    mean_acc: float
    std_acc: float
    weighted_mean_acc: float
    n_evaluations: int
    failed: str | None = None


@dataclass
class SweepReport:
    cells: list[CellResult]
    predictions: dict  # (cell label, triple, test_run) -> (pred, truth) arrays

    def result(self, cell: Cell) -> CellResult:
        for r in self.cells:
            if r.cell == cell:
                return r
        raise KeyError(f"no result for cell {cell}")

    def best_memory(self, classifier, scaler, features, source) -> tuple[int, float]:
        """(N, mean accuracy) of the best memory length in a cell family;
        ties prefer the smaller N."""
        group = [r for r in self.cells
                 if r.cell.classifier == classifier and r.cell.scaler == scaler
                 and r.cell.features == features and r.cell.source == source
                 and r.failed is None]
        if not group:
            raise KeyError(f"no results for {(classifier, scaler, features, source)}")
        group.sort(key=lambda r: (-r.mean_acc, r.cell.memory))
        return group[0].cell.memory, group[0].mean_acc

    def to_rows(self):
        header = ["classifier", "scaler", "features", "N", "source",
                  "mean_acc", "std_acc"]
        rows = [
            [r.cell.classifier, r.cell.scaler, r.cell.features, r.cell.memory,
             r.cell.source, repr(r.mean_acc), repr(r.std_acc)]
            for r in self.cells
        ]
        return header, rows

    def to_json_obj(self):
        return {
            "cells": [
                {"classifier": r.cell.classifier, "scaler": r.cell.scaler,
                 "features": r.cell.features, "N": r.cell.memory,
                 "source": r.cell.source, "mean_acc": r.mean_acc,
                 "std_acc": r.std_acc, "weighted_mean_acc": r.weighted_mean_acc,
                 "n_evaluations": r.n_evaluations, "failed": r.failed}
                for r in self.cells
            ],
        }


# Worker-process state (set once per worker via the pool initializer).
_WORKER = {}


def _limit_blas_threads():
    # one BLAS thread per worker; the workers themselves provide parallelism
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(1)
    except ImportError:
        pass


def _init_worker(run_features, plan, master_seed, window_before_scale, dump_keys,
                 single_thread_blas=False):
    if single_thread_blas:
        _limit_blas_threads()
    _WORKER["run_features"] = run_features
    _WORKER["plan"] = plan
    _WORKER["master_seed"] = master_seed
    _WORKER["window_before_scale"] = window_before_scale
    _WORKER["dump_keys"] = dump_keys


def _run_task(args):
    work_cell, triple = args
    dump = _WORKER["dump_keys"]
    collect = dump is True or (dump and work_cell.work_key() in dump)
    try:
        res = evaluate_cell(_WORKER["run_features"], _WORKER["plan"], triple,
                            work_cell, _WORKER["master_seed"],
                            _WORKER["window_before_scale"],
                            collect_predictions=collect)
        return (work_cell.work_key(), triple, res, None)
    except Exception as exc:  # recorded per cell, not silently dropped
        return (work_cell.work_key(), triple, None, f"{type(exc).__name__}: {exc}")


def run_sweep(run_features, grid: GridSpec, master_seed: int, jobs: int = 1,
              window_before_scale: bool = False, dump_cells=None) -> SweepReport:
    """Evaluate every grid cell over all 20 triples.

    Cells that differ only in the (ignored) feature set for the raw source
    share one computation.  `dump_cells` may be True (dump everything) or an
    iterable of Cell objects whose per-evaluation predictions are kept.
    """
    if len(run_features) != 6:
        raise ConfigError(f"sweep needs exactly 6 runs, got {len(run_features)}")
    plan = enumerate_splits(range(6))
    cells = grid.cells()

    work_cells = {}
    for cell in cells:
        work_cells.setdefault(cell.work_key(), cell)
    dump_keys = None
    if dump_cells is True:
        dump_keys = True
    elif dump_cells:
        dump_keys = {c.work_key() for c in dump_cells}

    tasks = [(work_cells[k], triple)
             for k in sorted(work_cells) for triple in plan.triples]

    results = {}
    if jobs > 1:
        with ProcessPoolExecutor(
                max_workers=jobs, initializer=_init_worker,
                initargs=(run_features, plan, master_seed, window_before_scale,
                          dump_keys, True)) as pool:
            for out in pool.map(_run_task, tasks, chunksize=1):
                results[(out[0], out[1])] = out
    else:
        _init_worker(run_features, plan, master_seed, window_before_scale, dump_keys)
        for task in tasks:
            out = _run_task(task)
            results[(out[0], out[1])] = out

    predictions = {}
    cell_results = []
    for cell in sorted(cells, key=lambda c: c.key()):
        accs, lengths = [], []
        failures = []
        for triple in plan.triples:
            key, _, res, err = results[(cell.work_key(), triple)]
            if err is not None:
                failures.append(f"{triple}: {err}")
                continue
            for test_run, acc, n_rows, pred in res:
                accs.append(acc)
                lengths.append(n_rows)
                if pred is not None:
                    predictions[(cell.label(), triple, test_run)] = (
                        pred, run_features[test_run].labels)
        if failures and not accs:
            cell_results.append(CellResult(cell=cell, mean_acc=float("nan"),
                                           std_acc=float("nan"),
                                           weighted_mean_acc=float("nan"),
                                           n_evaluations=0,
                                           failed="; ".join(failures)))
            continue
        accs_arr = np.asarray(accs)
        len_arr = np.asarray(lengths, dtype=float)
        cell_results.append(CellResult(
            cell=cell,
            mean_acc=float(accs_arr.mean()),
            std_acc=float(accs_arr.std()),
            weighted_mean_acc=float((accs_arr * len_arr).sum() / len_arr.sum()),
            n_evaluations=int(accs_arr.shape[0]),
            failed="; ".join(failures) if failures else None,
        ))
    return SweepReport(cells=cell_results, predictions=predictions)
