"""The three zone-state classifiers and their common train/predict surface."""

from __future__ import annotations

import json

import numpy as np

from ..model import ConfigError, DataError
from .forest import ForestModel
from .knn import KnnModel
from .svm import SvmModel

ALGORITHMS = ("knn", "rf", "svm")

__all__ = ["ALGORITHMS", "KnnModel", "ForestModel", "SvmModel",
           "train", "predict", "save_model", "load_model",
           "model_to_dict", "model_from_dict"]


def _validate_training_set(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataError("X must be 2-D with one label per row")
    if not np.all(np.isfinite(X)):
        raise DataError("training features must be finite (no NaN/inf)")
    if np.unique(y).shape[0] < 2:
        raise DataError("training set must contain at least 2 classes")
    return X, y


def train(algorithm: str, X, y, hyperparams: dict | None = None, seed: int = 0):
    """Train one of the three classifiers; deterministic given seed."""
    X, y = _validate_training_set(X, y)
    hp = dict(hyperparams or {})
    if algorithm == "knn":
        return KnnModel(k=hp.pop("k", 5)).fit(X, y)
    if algorithm == "rf":
        return ForestModel(n_trees=hp.pop("n_trees", 100), seed=seed).fit(X, y)
    if algorithm == "svm":
        return SvmModel(C=hp.pop("C", 1.0), gamma=hp.pop("gamma", None),
                        tol=hp.pop("tol", 1e-3),
                        max_iter=hp.pop("max_iter", 100_000)).fit(X, y)
    raise ConfigError(f"unknown algorithm {algorithm!r} (expected one of {ALGORITHMS})")


def predict(model, rows) -> np.ndarray:
    rows = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(rows)):
        raise DataError("prediction features must be finite (no NaN/inf)")
    return model.predict(rows)


_MODEL_TYPES = {"knn": KnnModel, "rf": ForestModel, "svm": SvmModel}


def model_to_dict(model) -> dict:
    for name, cls in _MODEL_TYPES.items():
        if isinstance(model, cls):
            return {"algorithm": name, "params": model.to_dict()}
    raise ConfigError(f"unknown model type {type(model).__name__}")


def model_from_dict(obj: dict):
    algorithm = obj.get("algorithm")
    if algorithm not in _MODEL_TYPES:
        raise ConfigError(f"unknown algorithm {algorithm!r} in model file")
    return _MODEL_TYPES[algorithm].from_dict(obj["params"])


def save_model(path, model):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)
        fh.write("\n")


def load_model(path):
    try:
        with open(path) as fh:
            return model_from_dict(json.load(fh))
    except OSError as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"model file {path} is not valid JSON: {exc}") from exc
