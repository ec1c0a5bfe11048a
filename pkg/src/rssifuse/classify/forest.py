"""Random forest of Gini decision trees (bootstrap + sqrt feature sampling)."""

from __future__ import annotations

import math

import numpy as np

from .. import _kernels
from ..model import ConfigError, DataError


class ForestModel:
    """Bagged ensemble of unpruned Gini trees.

    Each tree trains on an n-sample bootstrap with ceil(sqrt(d)) features
    considered per split and min_samples_leaf=1 (no depth cap).  Per-tree
    seeds derive from the model seed, so training is deterministic and
    independent of any parallel completion order.  Prediction is a
    plurality vote over trees; ties resolve to the smallest label.
    """

    def __init__(self, n_trees=100, seed=0):
        if n_trees < 1:
            raise ConfigError(f"n_trees must be >= 1, got {n_trees}")
        self.n_trees = int(n_trees)
        self.seed = int(seed)
        self.trees = None
        self.n_classes = None
        self.n_features = None

    def fit(self, X, y):
        X = np.ascontiguousarray(X, dtype=float)
        y = np.asarray(y, dtype=np.int64)
        n, d = X.shape
        self.n_classes = int(y.max()) + 1
        self.n_features = d
        max_features = int(math.ceil(math.sqrt(d)))
        seeds = np.random.SeedSequence(self.seed).spawn(self.n_trees)
        self.trees = []
        for t in range(self.n_trees):
            rng = np.random.default_rng(seeds[t])
            boot = rng.integers(0, n, size=n)
            tree_seed = int(seeds[t].generate_state(1, np.uint64)[0])
            tree = _kernels.grow_tree(X[boot], y[boot], self.n_classes,
                                      max_features, 1, tree_seed)
            self.trees.append(tree)
        return self

    def predict(self, X):
        votes = self.vote_counts(X)
        return np.argmax(votes, axis=1).astype(np.int64)

    def vote_counts(self, X):
        """Per-row vote counts over trees, (n, n_classes)."""
        if self.trees is None:
            raise DataError("model is not fitted")
        X = np.ascontiguousarray(X, dtype=float)
        if X.shape[1] != self.n_features:
            raise DataError(f"feature width {X.shape[1]} != "
                            f"training width {self.n_features}")
        votes = np.zeros((X.shape[0], self.n_classes), dtype=np.int64)
        rows = np.arange(X.shape[0])
        for tree in self.trees:
            pred = _kernels.tree_predict(*tree, X)
            votes[rows, pred] += 1
        return votes

    def to_dict(self):
        return {
            "n_trees": self.n_trees,
            "seed": self.seed,
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "trees": [
                {"feature": f.tolist(), "threshold": t.tolist(), "left": l.tolist(),
                 "right": r.tolist(), "leaf": leaf.tolist()}
                for f, t, l, r, leaf in self.trees
            ],
        }

    @staticmethod
    def from_dict(obj):
        model = ForestModel(n_trees=obj["n_trees"], seed=obj["seed"])
        model.n_classes = obj["n_classes"]
        model.n_features = obj["n_features"]
        model.trees = [
            (np.asarray(t["feature"], dtype=np.int32),
             np.asarray(t["threshold"], dtype=float),
             np.asarray(t["left"], dtype=np.int32),
             np.asarray(t["right"], dtype=np.int32),
             np.asarray(t["leaf"], dtype=np.int32))
            for t in obj["trees"]
        ]
        return model
