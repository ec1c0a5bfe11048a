"""Pure-numpy implementations of the hot kernels.

These are the reference semantics; the compiled twins in _speedups.pyx must
match them (the parity tests compare both backends).  Anything here that
looks overly explicit about evaluation order is deliberate: the compiled
code replays the same order so results agree bit-for-bit wherever the math
is free of transcendentals.
"""

from __future__ import annotations

import math

import numpy as np

_U64 = 0xFFFFFFFFFFFFFFFF


# ---------------------------------------------------------------------------
# Particle-filter fusion


def fuse_log_weights(px, ty, tz, qpos, ref, floor, readings,
                     ploss_exp, variance, band_angles, band_gains):
    """Sum of per-sensor RSSI log-likelihoods for each particle position.

    px: (n,) particle x-positions; the transmitter sits at (px, ty, tz).
    qpos: (m, 3) sensor positions; ref/floor: (m,) per-sensor calibration.
    readings: (m,) observed RSSI with NaN for sensors without a reading
    (those contribute 0, i.e. a factor of 1).
    Returns (n,) log-likelihood sums.
    """
    px = np.asarray(px, dtype=float)
    have = ~np.isnan(readings)
    n = px.shape[0]
    if not np.any(have):
        return np.zeros(n)
    qx = qpos[have, 0]
    qy = qpos[have, 1]
    qz = qpos[have, 2]
    dx = px[:, None] - qx[None, :]
    dy = ty - qy
    dz = tz - qz
    dist = np.sqrt(dx * dx + (dy * dy + dz * dz)[None, :])
    cos_a = np.clip(dx / dist, -1.0, 1.0)
    alpha = np.arccos(cos_a)
    band = np.minimum(np.searchsorted(band_angles, alpha, side="right"),
                      len(band_angles) - 1)
    gain = band_gains[band]
    mu = ref[None, have] - ploss_exp * 10.0 * np.log10(dist) + gain
    mu = np.maximum(floor[None, have], mu)
    resid = readings[None, have] - mu
    const = -0.5 * math.log(2.0 * math.pi * variance)
    ll = const - resid * resid / (2.0 * variance)
    return ll.sum(axis=1)


# ---------------------------------------------------------------------------
# SMO solver for the binary soft-margin SVM dual

_TAU = 1e-12


def smo_solve(K, y, C, tol, max_iter):
    """Solve min 1/2 a'Qa - e'a, 0 <= a <= C, y'a = 0, with Q = yy' * K.

    Working-set selection is the maximal KKT-violating pair; terminates when
    the duality-gap surrogate m(a) - M(a) drops below tol.  Returns
    (alpha, rho, n_iter, converged); the decision function is
    sum_i alpha_i y_i K(x_i, x) - rho.
    """
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    alpha = np.zeros(n)
    G = np.full(n, -1.0)  # gradient of the dual objective at alpha = 0
    pos = y > 0

    n_iter = 0
    converged = False
    while n_iter < max_iter:
        mask_up = np.where(pos, alpha < C, alpha > 0)
        mask_low = np.where(pos, alpha > 0, alpha < C)
        val = -y * G
        up_val = np.where(mask_up, val, -np.inf)
        low_val = np.where(mask_low, val, np.inf)
        i = int(np.argmax(up_val))
        j = int(np.argmin(low_val))
        m_up = up_val[i]
        m_low = low_val[j]
        if m_up - m_low <= tol:
            converged = True
            break
        n_iter += 1

        Ki = K[i]
        Kj = K[j]
        yi = y[i]
        yj = y[j]
        old_ai = alpha[i]
        old_aj = alpha[j]
        if yi != yj:
            quad = Ki[i] + Kj[j] + 2.0 * Ki[j] * yi * yj
            if quad <= 0.0:
                quad = _TAU
            delta = (-G[i] - G[j]) / quad
            diff = old_ai - old_aj
            ai = old_ai + delta
            aj = old_aj + delta
            if diff > 0.0:
                if aj < 0.0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0.0:
                    ai = 0.0
                    aj = -diff
            if diff > 0.0:
                if ai > C:
                    ai = C
                    aj = C - diff
            else:
                if aj > C:
                    aj = C
                    ai = C + diff
        else:
            quad = Ki[i] + Kj[j] - 2.0 * Ki[j] * yi * yj
            if quad <= 0.0:
                quad = _TAU
            delta = (G[i] - G[j]) / quad
            total = old_ai + old_aj
            ai = old_ai - delta
            aj = old_aj + delta
            if total > C:
                if ai > C:
                    ai = C
                    aj = total - C
            else:
                if aj < 0.0:
                    aj = 0.0
                    ai = total
            if total > C:
                if aj > C:
                    aj = C
                    ai = total - C
            else:
                if ai < 0.0:
                    ai = 0.0
                    aj = total
        alpha[i] = ai
        alpha[j] = aj
        d_ai = (ai - old_ai) * yi
        d_aj = (aj - old_aj) * yj
        G += y * (Ki * d_ai + Kj * d_aj)

    rho = _calculate_rho(alpha, G, y, C)
    return alpha, rho, n_iter, converged


def _calculate_rho(alpha, G, y, C):
    yG = y * G
    free = (alpha > 0.0) & (alpha < C)
    if np.any(free):
        return float(yG[free].sum() / free.sum())
    at_ub = alpha >= C
    at_lb = alpha <= 0.0
    upper_set = (at_ub & (y < 0)) | (at_lb & (y > 0))
    lower_set = (at_ub & (y > 0)) | (at_lb & (y < 0))
    ub = yG[upper_set].min() if np.any(upper_set) else np.inf
    lb = yG[lower_set].max() if np.any(lower_set) else -np.inf
    if not np.isfinite(ub) and not np.isfinite(lb):
        return 0.0
    if not np.isfinite(ub):
        return float(lb)
    if not np.isfinite(lb):
        return float(ub)
    return float((ub + lb) / 2.0)


# ---------------------------------------------------------------------------
# Gini decision tree
#
# Nodes are stored flat in depth-first pre-order: feature[k] == -1 marks a
# leaf with majority class leaf[k]; otherwise rows with
# X[:, feature[k]] <= threshold[k] go to left[k], the rest to right[k].


def _splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & _U64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    z = z ^ (z >> 31)
    return state, z


def _permutation(n, state):
    """Fisher-Yates permutation of range(n) driven by splitmix64."""
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        state, z = _splitmix64(state)
        j = z % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm, state


def _best_split_for_feature(values, labels, n_classes, min_samples_leaf):
    """Scan sorted values of one feature for the best Gini split.

    Returns (proxy, threshold) or None when the feature is constant or no
    boundary respects min_samples_leaf.  The proxy is
    sum_c nL_c^2 / nL + sum_c nR_c^2 / nR (maximizing it minimizes the
    weighted Gini impurity); candidates are scanned in ascending value
    order and ties keep the first candidate.
    """
    n = values.shape[0]
    order = np.argsort(values, kind="stable")
    v = values[order]
    if v[0] == v[-1]:
        return None
    lab = labels[order]
    onehot = np.zeros((n, n_classes), dtype=np.int64)
    onehot[np.arange(n), lab] = 1
    cum = np.cumsum(onehot, axis=0)
    total = cum[-1]

    lo = min_samples_leaf - 1
    hi = n - min_samples_leaf  # boundary k splits into [0..k] | [k+1..n-1]
    best_proxy = -np.inf
    best_thr = 0.0
    found = False
    boundaries = np.nonzero(v[:-1] < v[1:])[0]
    for k in boundaries:
        if k < lo or k >= hi:
            continue
        n_left = k + 1
        n_right = n - n_left
        left = cum[k].astype(float)
        right = (total - cum[k]).astype(float)
        proxy = float((left * left).sum()) / n_left + float((right * right).sum()) / n_right
        if proxy > best_proxy:
            thr = (v[k] + v[k + 1]) / 2.0
            if thr >= v[k + 1]:
                thr = v[k]
            best_proxy = proxy
            best_thr = thr
            found = True
    if not found:
        return None
    return best_proxy, best_thr


def _majority(labels, n_classes):
    counts = np.bincount(labels, minlength=n_classes)
    return int(np.argmax(counts))  # first max = smallest label on ties


def grow_tree(X, y, n_classes, max_features, min_samples_leaf, seed):
    """Grow an unpruned Gini decision tree; returns flat node arrays.

    max_features non-constant features are evaluated per node (shuffled with
    a splitmix64 stream seeded by `seed`); if none of them yields a valid
    split the search continues down the permutation, so leaves are pure
    whenever the rows are distinguishable.  Nodes come out in depth-first
    pre-order, left subtree first.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    n, d = X.shape
    max_features = min(max(1, int(max_features)), d)

    feature, threshold, left, right, leaf = [], [], [], [], []
    state = seed & _U64

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        leaf.append(-1)
        return len(feature) - 1

    stack = [(np.arange(n), -1, False)]
    while stack:
        rows, parent, is_left = stack.pop()
        node = new_node()
        if parent >= 0:
            if is_left:
                left[parent] = node
            else:
                right[parent] = node
        labels = y[rows]
        if labels.shape[0] < 2 * min_samples_leaf or np.all(labels == labels[0]):
            leaf[node] = _majority(labels, n_classes)
            continue
        perm, state = _permutation(d, state)
        best = None
        best_feature = -1
        n_useful = 0
        for f in perm:
            if n_useful >= max_features and best is not None:
                break
            res = _best_split_for_feature(X[rows, f], labels, n_classes,
                                          min_samples_leaf)
            if res is None:
                continue
            n_useful += 1
            if best is None or res[0] > best[0]:
                best = res
                best_feature = f
        if best is None:
            leaf[node] = _majority(labels, n_classes)
            continue
        thr = best[1]
        mask = X[rows, best_feature] <= thr
        feature[node] = best_feature
        threshold[node] = thr
        # right pushed first so the left subtree is built (and numbered) first
        stack.append((rows[~mask], node, False))
        stack.append((rows[mask], node, True))

    return (np.array(feature, dtype=np.int32), np.array(threshold),
            np.array(left, dtype=np.int32), np.array(right, dtype=np.int32),
            np.array(leaf, dtype=np.int32))


def tree_predict(feature, threshold, left, right, leaf, X):
    """Route each row of X to a leaf; returns (n,) class labels."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int32)
    active = feature[node] >= 0
    while np.any(active):
        idx = np.nonzero(active)[0]
        cur = node[idx]
        go_left = X[idx, feature[cur]] <= threshold[cur]
        node[idx] = np.where(go_left, left[cur], right[cur])
        active[idx] = feature[node[idx]] >= 0
    return leaf[node].astype(np.int64)
