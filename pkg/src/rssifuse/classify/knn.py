"""k-nearest-neighbors classifier with Euclidean distance and majority vote."""

from __future__ import annotations

import numpy as np

from ..model import ConfigError, DataError


class KnnModel:
    """Stores the training set; prediction is a majority vote of the k
    nearest rows.  Vote ties go to the label of the nearest neighbor among
    the tied classes; equal distances break by training-row index."""

    def __init__(self, k=5):
        if k < 1:
            raise ConfigError(f"k must be >= 1, got {k}")
        self.k = int(k)
        self.train_rows = None
        self.train_labels = None

    def fit(self, X, y):
        X = np.ascontiguousarray(X, dtype=float)
        y = np.asarray(y, dtype=np.int64)
        if self.k > X.shape[0]:
            raise ConfigError(f"k={self.k} exceeds training size {X.shape[0]}")
        self.train_rows = X
        self.train_labels = y
        return self

    def predict(self, X):
        if self.train_rows is None:
            raise DataError("model is not fitted")
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.train_rows.shape[1]:
            raise DataError(f"feature width {X.shape[1]} != "
                            f"training width {self.train_rows.shape[1]}")
        k = self.k
        out = np.empty(X.shape[0], dtype=np.int64)
        # squared Euclidean via the expansion trick, chunked to bound memory
        train_sq = np.einsum("ij,ij->i", self.train_rows, self.train_rows)
        chunk = max(1, int(2e7) // max(1, self.train_rows.shape[0]))
        for start in range(0, X.shape[0], chunk):
            block = X[start:start + chunk]
            d2 = (np.einsum("ij,ij->i", block, block)[:, None] + train_sq[None, :]
                  - 2.0 * (block @ self.train_rows.T))
            part = np.argpartition(d2, k - 1, axis=1)[:, :k]
            for r in range(block.shape[0]):
                idx = part[r]
                order = idx[np.lexsort((idx, d2[r, idx]))]  # distance, then index
                labels = self.train_labels[order]
                counts = np.bincount(labels)
                top = counts.max()
                tied = set(np.nonzero(counts == top)[0])
                if len(tied) == 1:
                    out[start + r] = tied.pop()
                else:
                    for lab in labels:
                        if lab in tied:
                            out[start + r] = lab
                            break
        return out

    def to_dict(self):
        return {"k": self.k,
                "train_rows": self.train_rows.tolist(),
                "train_labels": self.train_labels.tolist()}

    @staticmethod
    def from_dict(obj):
        model = KnnModel(k=obj["k"])
        model.fit(np.asarray(obj["train_rows"], dtype=float),
                  np.asarray(obj["train_labels"], dtype=np.int64))
        return model
