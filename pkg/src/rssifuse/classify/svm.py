"""RBF-kernel support vector machine, one binary machine per class pair.

Each binary subproblem is solved with SMO (maximal-KKT-violating-pair
working sets) through the kernels backend.  Multiclass prediction is
one-vs-one voting; vote ties resolve to the class with the largest sum of
winning-decision magnitudes, then to the smallest label.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .. import _kernels
from ..model import ConfigError, DataError

DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 100_000


def rbf_kernel(a, b, gamma):
    """exp(-gamma * ||x - z||^2) for all row pairs of a and b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


@dataclass
class BinaryMachine:
    class_pos: int   # mapped to y = +1
    class_neg: int   # mapped to y = -1
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i at the support vectors
    alphas: np.ndarray     # raw alpha_i (0 < alpha_i <= C)
    sv_labels: np.ndarray  # +-1 per support vector
    rho: float
    converged: bool
    n_iter: int

    def decision(self, K_cols: np.ndarray) -> np.ndarray:
        """Decision values given kernel columns against the support vectors."""
        return K_cols @ self.dual_coef - self.rho


class SvmModel:
    """One-vs-one soft-margin RBF SVM trained with SMO."""

    def __init__(self, C=1.0, gamma=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
        if C <= 0:
            raise ConfigError(f"C must be > 0, got {C}")
        self.C = float(C)
        self.gamma = gamma  # None = 1 / (n_features * mean feature variance)
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self.machines: list[BinaryMachine] | None = None
        self.classes = None
        self.gamma_ = None
        self.n_features = None
        self._train_X = None
        self._train_sq = None
        self._sv_index = None

    def _resolve_gamma(self, X):
        if self.gamma is not None:
            return float(self.gamma)
        mean_var = float(np.mean(np.var(X, axis=0)))
        if mean_var > 0.0:
            return 1.0 / (X.shape[1] * mean_var)
        return 1.0 / X.shape[1]

    def fit(self, X, y):
        X = np.ascontiguousarray(X, dtype=float)
        y = np.asarray(y, dtype=np.int64)
        self.classes = np.unique(y)
        self.n_features = X.shape[1]
        self.gamma_ = self._resolve_gamma(X)
        self.machines = []
        # one Gram matrix shared by all pair machines
        sq = np.einsum("ij,ij->i", X, X)
        gram = X @ X.T
        self._train_X = X
        self._train_sq = sq
        self._sv_index = []
        for a, b in itertools.combinations(self.classes.tolist(), 2):
            idx = np.nonzero((y == a) | (y == b))[0]
            yp = np.where(y[idx] == a, 1.0, -1.0)
            d2 = sq[idx][:, None] + sq[idx][None, :] - 2.0 * gram[np.ix_(idx, idx)]
            np.maximum(d2, 0.0, out=d2)
            K = np.exp(-self.gamma_ * d2)
            alpha, rho, n_iter, converged = _kernels.smo_solve(
                np.ascontiguousarray(K), yp, self.C, self.tol, self.max_iter)
            if not converged:
                warnings.warn(
                    f"SMO for pair ({a},{b}) hit the iteration cap "
                    f"({self.max_iter}); model may be slightly suboptimal",
                    stacklevel=2)
            sv = alpha > 0.0
            self._sv_index.append(idx[sv])
            self.machines.append(BinaryMachine(
                class_pos=int(a), class_neg=int(b),
                support_vectors=self._train_X[idx[sv]],
                dual_coef=(alpha[sv] * yp[sv]),
                alphas=alpha[sv].copy(),
                sv_labels=yp[sv].copy(),
                rho=float(rho),
                converged=bool(converged),
                n_iter=int(n_iter),
            ))
        return self

    def decision_values(self, X):
        """(n, n_machines) decision values, machine order = class pairs."""
        if self.machines is None:
            raise DataError("model is not fitted")
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.n_features:
            raise DataError(f"feature width {X.shape[1]} != "
                            f"training width {self.n_features}")
        if getattr(self, "_train_X", None) is not None:
            # fitted in-process: one cross-Gram against the kept training
            # matrix, sliced per machine
            xx = np.einsum("ij,ij->i", X, X)
            cross = X @ self._train_X.T
            cols = []
            for mach, sv_idx in zip(self.machines, self._sv_index):
                d2 = xx[:, None] + self._train_sq[sv_idx][None, :] \
                    - 2.0 * cross[:, sv_idx]
                np.maximum(d2, 0.0, out=d2)
                cols.append(mach.decision(np.exp(-self.gamma_ * d2)))
            return np.column_stack(cols)
        cols = []
        for mach in self.machines:
            K = rbf_kernel(X, mach.support_vectors, self.gamma_)
            cols.append(mach.decision(K))
        return np.column_stack(cols)

    def predict(self, X):
        dec = self.decision_values(X)
        n = dec.shape[0]
        n_classes = int(self.classes.max()) + 1
        votes = np.zeros((n, n_classes), dtype=np.int64)
        magnitude = np.zeros((n, n_classes))
        for m_idx, mach in enumerate(self.machines):
            d = dec[:, m_idx]
            winner = np.where(d > 0.0, mach.class_pos, mach.class_neg)
            rows = np.arange(n)
            votes[rows, winner] += 1
            magnitude[rows, winner] += np.abs(d)
        out = np.empty(n, dtype=np.int64)
        for r in range(n):
            top = votes[r].max()
            tied = np.nonzero(votes[r] == top)[0]
            if tied.shape[0] == 1:
                out[r] = tied[0]
            else:
                mags = magnitude[r, tied]
                out[r] = tied[int(np.argmax(mags))]  # first max = smallest label
        return out

    def to_dict(self):
        return {
            "C": self.C,
            "gamma": self.gamma_,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "classes": self.classes.tolist(),
            "n_features": self.n_features,
            "machines": [
                {"class_pos": m.class_pos, "class_neg": m.class_neg,
                 "support_vectors": m.support_vectors.tolist(),
                 "dual_coef": m.dual_coef.tolist(),
                 "alphas": m.alphas.tolist(),
                 "sv_labels": m.sv_labels.tolist(),
                 "rho": m.rho, "converged": m.converged, "n_iter": m.n_iter}
                for m in self.machines
            ],
        }

    @staticmethod
    def from_dict(obj):
        model = SvmModel(C=obj["C"], gamma=obj["gamma"], tol=obj["tol"],
                         max_iter=obj["max_iter"])
        model.gamma_ = obj["gamma"]
        model.classes = np.asarray(obj["classes"], dtype=np.int64)
        model.n_features = obj["n_features"]
        model.machines = [
            BinaryMachine(
                class_pos=m["class_pos"], class_neg=m["class_neg"],
                support_vectors=np.asarray(m["support_vectors"], dtype=float),
                dual_coef=np.asarray(m["dual_coef"], dtype=float),
                alphas=np.asarray(m["alphas"], dtype=float),
                sv_labels=np.asarray(m["sv_labels"], dtype=float),
                rho=m["rho"], converged=m["converged"], n_iter=m["n_iter"])
            for m in obj["machines"]
        ]
        return model
