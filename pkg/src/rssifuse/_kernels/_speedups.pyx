# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the pykernels functions.

Semantics (selection order, tie-breaking, accumulation order) replicate the
numpy fallback exactly; the build disables FP contraction so the pure
add/mul paths (SMO, tree growth) agree bit-for-bit with numpy.
"""

from libc.math cimport acos, log, log10, sqrt, INFINITY, M_PI, isnan
from libc.stdlib cimport free, malloc, qsort
from libc.string cimport memcpy

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t i64


# ---------------------------------------------------------------------------
# Particle-filter fusion


def fuse_log_weights(px, double ty, double tz, qpos, ref, floor, readings,
                     double ploss_exp, double variance, band_angles, band_gains):
    cdef double[::1] px_v = np.ascontiguousarray(px, dtype=np.float64)
    cdef double[:, ::1] q_v = np.ascontiguousarray(qpos, dtype=np.float64)
    cdef double[::1] ref_v = np.ascontiguousarray(ref, dtype=np.float64)
    cdef double[::1] floor_v = np.ascontiguousarray(floor, dtype=np.float64)
    cdef double[::1] read_v = np.ascontiguousarray(readings, dtype=np.float64)
    cdef double[::1] ang_v = np.ascontiguousarray(band_angles, dtype=np.float64)
    cdef double[::1] gain_v = np.ascontiguousarray(band_gains, dtype=np.float64)

    cdef Py_ssize_t n = px_v.shape[0]
    cdef Py_ssize_t m = q_v.shape[0]
    cdef Py_ssize_t n_bands = ang_v.shape[0]
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr

    cdef double const_term = -0.5 * log(2.0 * M_PI * variance)
    cdef double two_var = 2.0 * variance
    cdef Py_ssize_t i, s, b
    cdef double dx, dy, dz, dist, cos_a, alpha, gain, mu, resid, acc

    with nogil:
        for i in range(n):
            acc = 0.0
            for s in range(m):
                if isnan(read_v[s]):
                    continue
                dx = px_v[i] - q_v[s, 0]
                dy = ty - q_v[s, 1]
                dz = tz - q_v[s, 2]
                dist = sqrt(dx * dx + (dy * dy + dz * dz))
                cos_a = dx / dist
                if cos_a > 1.0:
                    cos_a = 1.0
                elif cos_a < -1.0:
                    cos_a = -1.0
                alpha = acos(cos_a)
                b = 0
                while b < n_bands - 1 and alpha >= ang_v[b]:
                    b += 1
                gain = gain_v[b]
                mu = ref_v[s] - ploss_exp * 10.0 * log10(dist) + gain
                if mu < floor_v[s]:
                    mu = floor_v[s]
                resid = read_v[s] - mu
                acc += const_term - resid * resid / two_var
            out[i] = acc
    return out_arr


# ---------------------------------------------------------------------------
# SMO solver

cdef double _TAU = 1e-12


def smo_solve(K, y, double C, double tol, long max_iter):
    cdef double[:, ::1] K_v = np.ascontiguousarray(K, dtype=np.float64)
    cdef double[::1] y_v = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = y_v.shape[0]

    alpha_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] alpha = alpha_arr
    grad_arr = np.full(n, -1.0, dtype=np.float64)
    cdef double[::1] G = grad_arr

    cdef long n_iter = 0
    cdef bint converged = False
    cdef Py_ssize_t i, j, t
    cdef double m_up, m_low, val
    cdef double quad, delta, diff, total, ai, aj, old_ai, old_aj
    cdef double yi, yj, d_ai, d_aj
    cdef double rho

    with nogil:
        while n_iter < max_iter:
            # maximal KKT-violating pair (first max / first min on ties,
            # matching numpy argmax/argmin)
            i = -1
            j = -1
            m_up = -INFINITY
            m_low = INFINITY
            for t in range(n):
                val = -y_v[t] * G[t]
                if (y_v[t] > 0 and alpha[t] < C) or (y_v[t] <= 0 and alpha[t] > 0):
                    if val > m_up:
                        m_up = val
                        i = t
                if (y_v[t] > 0 and alpha[t] > 0) or (y_v[t] <= 0 and alpha[t] < C):
                    if val < m_low:
                        m_low = val
                        j = t
            if m_up - m_low <= tol:
                converged = True
                break
            n_iter += 1

            yi = y_v[i]
            yj = y_v[j]
            old_ai = alpha[i]
            old_aj = alpha[j]
            if yi != yj:
                quad = K_v[i, i] + K_v[j, j] + 2.0 * K_v[i, j] * yi * yj
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
                quad = K_v[i, i] + K_v[j, j] - 2.0 * K_v[i, j] * yi * yj
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
            for t in range(n):
                G[t] += y_v[t] * (K_v[i, t] * d_ai + K_v[j, t] * d_aj)

        rho = _calculate_rho(alpha, G, y_v, C, n)
    return alpha_arr, rho, n_iter, converged


cdef double _calculate_rho(double[::1] alpha, double[::1] G, double[::1] y,
                           double C, Py_ssize_t n) noexcept nogil:
    cdef double sum_free = 0.0
    cdef long nr_free = 0
    cdef double ub = INFINITY
    cdef double lb = -INFINITY
    cdef Py_ssize_t t
    cdef double yG
    for t in range(n):
        yG = y[t] * G[t]
        if 0.0 < alpha[t] < C:
            sum_free += yG
            nr_free += 1
        elif alpha[t] >= C:
            if y[t] < 0:
                if yG < ub:
                    ub = yG
            else:
                if yG > lb:
                    lb = yG
        else:
            if y[t] > 0:
                if yG < ub:
                    ub = yG
            else:
                if yG > lb:
                    lb = yG
    if nr_free > 0:
        return sum_free / nr_free
    if ub == INFINITY and lb == -INFINITY:
        return 0.0
    if ub == INFINITY:
        return lb
    if lb == -INFINITY:
        return ub
    return (ub + lb) / 2.0


# ---------------------------------------------------------------------------
# Gini decision tree

ctypedef struct SortPair:
    double value
    long pos


cdef int _pair_cmp(const void *a, const void *b) noexcept nogil:
    cdef const SortPair *pa = <const SortPair *> a
    cdef const SortPair *pb = <const SortPair *> b
    if pa.value < pb.value:
        return -1
    if pa.value > pb.value:
        return 1
    if pa.pos < pb.pos:
        return -1
    if pa.pos > pb.pos:
        return 1
    return 0


cdef unsigned long long _splitmix64(unsigned long long *state) noexcept nogil:
    state[0] = state[0] + <unsigned long long> 0x9E3779B97F4A7C15
    cdef unsigned long long z = state[0]
    z = (z ^ (z >> 30)) * <unsigned long long> 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <unsigned long long> 0x94D049BB133111EB
    return z ^ (z >> 31)


ctypedef struct StackEntry:
    long start
    long end
    long parent
    bint is_left


def grow_tree(X, y, long n_classes, long max_features, long min_samples_leaf,
              unsigned long long seed):
    cdef double[:, ::1] X_v = np.ascontiguousarray(X, dtype=np.float64)
    cdef i64[::1] y_v = np.ascontiguousarray(y, dtype=np.int64)
    cdef long n = <long> X_v.shape[0]
    cdef long d = <long> X_v.shape[1]
    if max_features < 1:
        max_features = 1
    if max_features > d:
        max_features = d
    if min_samples_leaf < 1:
        min_samples_leaf = 1

    cdef unsigned long long state = seed

    # node storage (python lists; node counts are modest)
    feature_l = []
    threshold_l = []
    left_l = []
    right_l = []
    leaf_l = []

    cdef long *samples = <long *> malloc(n * sizeof(long))
    cdef long *samples_tmp = <long *> malloc(n * sizeof(long))
    cdef SortPair *pairs = <SortPair *> malloc(n * sizeof(SortPair))
    cdef long *perm = <long *> malloc(d * sizeof(long))
    cdef long *counts_total = <long *> malloc(n_classes * sizeof(long))
    cdef long *counts_left = <long *> malloc(n_classes * sizeof(long))
    cdef StackEntry *stack = <StackEntry *> malloc((2 * n + 8) * sizeof(StackEntry))
    if (samples == NULL or samples_tmp == NULL or pairs == NULL or perm == NULL
            or counts_total == NULL or counts_left == NULL or stack == NULL):
        free(samples); free(samples_tmp); free(pairs); free(perm)
        free(counts_total); free(counts_left); free(stack)
        raise MemoryError()

    cdef long k, c, t
    for k in range(n):
        samples[k] = k

    cdef long stack_top = 0
    stack[0].start = 0
    stack[0].end = n
    stack[0].parent = -1
    stack[0].is_left = False
    stack_top = 1

    cdef long start, end, parent, node_id, n_node
    cdef bint is_left, pure, found_feature_valid
    cdef long majority, best_count
    cdef long fi, f, swap_i, swap_j, tmp_l, n_useful
    cdef unsigned long long z
    cdef double best_proxy, best_thr, thr, proxy, sl, sr
    cdef long best_feature
    cdef long n_left, n_right, lo, hi
    cdef long row, cls
    cdef double v_k, v_k1

    try:
        while stack_top > 0:
            stack_top -= 1
            start = stack[stack_top].start
            end = stack[stack_top].end
            parent = stack[stack_top].parent
            is_left = stack[stack_top].is_left

            node_id = len(feature_l)
            feature_l.append(-1)
            threshold_l.append(0.0)
            left_l.append(-1)
            right_l.append(-1)
            leaf_l.append(-1)
            if parent >= 0:
                if is_left:
                    left_l[parent] = node_id
                else:
                    right_l[parent] = node_id

            n_node = end - start
            for c in range(n_classes):
                counts_total[c] = 0
            for k in range(start, end):
                counts_total[y_v[samples[k]]] += 1
            majority = 0
            best_count = counts_total[0]
            for c in range(1, n_classes):
                if counts_total[c] > best_count:
                    best_count = counts_total[c]
                    majority = c
            pure = best_count == n_node

            if n_node < 2 * min_samples_leaf or pure:
                leaf_l[node_id] = majority
                continue

            # shuffled feature order for this node
            for fi in range(d):
                perm[fi] = fi
            for fi in range(d - 1, 0, -1):
                z = _splitmix64(&state)
                swap_j = <long> (z % <unsigned long long> (fi + 1))
                tmp_l = perm[fi]
                perm[fi] = perm[swap_j]
                perm[swap_j] = tmp_l

            best_proxy = -INFINITY
            best_feature = -1
            best_thr = 0.0
            n_useful = 0
            lo = min_samples_leaf - 1
            hi = n_node - min_samples_leaf

            for fi in range(d):
                if n_useful >= max_features and best_feature != -1:
                    break
                f = perm[fi]
                for k in range(n_node):
                    pairs[k].value = X_v[samples[start + k], f]
                    pairs[k].pos = k
                qsort(pairs, n_node, sizeof(SortPair), _pair_cmp)
                if pairs[0].value == pairs[n_node - 1].value:
                    continue
                found_feature_valid = False
                for c in range(n_classes):
                    counts_left[c] = 0
                for k in range(n_node - 1):
                    counts_left[y_v[samples[start + pairs[k].pos]]] += 1
                    v_k = pairs[k].value
                    v_k1 = pairs[k + 1].value
                    if v_k == v_k1:
                        continue
                    if k < lo or k >= hi:
                        continue
                    found_feature_valid = True
                    n_left = k + 1
                    n_right = n_node - n_left
                    sl = 0.0
                    sr = 0.0
                    for c in range(n_classes):
                        sl = sl + (<double> counts_left[c]) * (<double> counts_left[c])
                        sr = sr + (<double> (counts_total[c] - counts_left[c])) * \
                             (<double> (counts_total[c] - counts_left[c]))
                    proxy = sl / n_left + sr / n_right
                    if proxy > best_proxy:
                        thr = (v_k + v_k1) / 2.0
                        if thr >= v_k1:
                            thr = v_k
                        best_proxy = proxy
                        best_thr = thr
                        best_feature = f
                if found_feature_valid:
                    n_useful += 1

            if best_feature == -1:
                leaf_l[node_id] = majority
                continue

            feature_l[node_id] = best_feature
            threshold_l[node_id] = best_thr
            # stable partition of the segment around the threshold
            n_left = 0
            for k in range(start, end):
                if X_v[samples[k], best_feature] <= best_thr:
                    samples_tmp[n_left] = samples[k]
                    n_left += 1
            n_right = n_left
            for k in range(start, end):
                if not X_v[samples[k], best_feature] <= best_thr:
                    samples_tmp[n_right] = samples[k]
                    n_right += 1
            memcpy(samples + start, samples_tmp, n_node * sizeof(long))

            stack[stack_top].start = start + n_left
            stack[stack_top].end = end
            stack[stack_top].parent = node_id
            stack[stack_top].is_left = False
            stack_top += 1
            stack[stack_top].start = start
            stack[stack_top].end = start + n_left
            stack[stack_top].parent = node_id
            stack[stack_top].is_left = True
            stack_top += 1
    finally:
        free(samples)
        free(samples_tmp)
        free(pairs)
        free(perm)
        free(counts_total)
        free(counts_left)
        free(stack)

    return (np.array(feature_l, dtype=np.int32), np.array(threshold_l),
            np.array(left_l, dtype=np.int32), np.array(right_l, dtype=np.int32),
            np.array(leaf_l, dtype=np.int32))


def tree_predict(feature, threshold, left, right, leaf, X):
    cdef cnp.int32_t[::1] feat_v = np.ascontiguousarray(feature, dtype=np.int32)
    cdef double[::1] thr_v = np.ascontiguousarray(threshold, dtype=np.float64)
    cdef cnp.int32_t[::1] left_v = np.ascontiguousarray(left, dtype=np.int32)
    cdef cnp.int32_t[::1] right_v = np.ascontiguousarray(right, dtype=np.int32)
    cdef cnp.int32_t[::1] leaf_v = np.ascontiguousarray(leaf, dtype=np.int32)
    cdef double[:, ::1] X_v = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = X_v.shape[0]
    out_arr = np.empty(n, dtype=np.int64)
    cdef i64[::1] out = out_arr
    cdef Py_ssize_t r
    cdef long node
    with nogil:
        for r in range(n):
            node = 0
            while feat_v[node] >= 0:
                if X_v[r, feat_v[node]] <= thr_v[node]:
                    node = left_v[node]
                else:
                    node = right_v[node]
            out[r] = leaf_v[node]
    return out_arr
