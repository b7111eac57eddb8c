# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled filter/smoother passes.

Mirrors `feeflow._pure` step for step. Observation dimension is limited to
1 or 2 (the hot configurations); callers route anything else, or any step
flagged as numerically degenerate here, to the pure implementation.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport log, sqrt

cnp.import_array()

STATUS_OK = 0
STATUS_SINGULAR_F = 1
STATUS_SINGULAR_PRED = 2
STATUS_UNSUPPORTED = 3

cdef double _LOG_2PI = 1.8378770664093453
cdef double _COND_LIMIT = 1e12


cdef inline void _matmul(double* out, double* X, double* Y, int r, int inner, int c) noexcept nogil:
    # out (r,c) = X (r,inner) @ Y (inner,c)
    cdef int i, j, l
    cdef double s
    for i in range(r):
        for j in range(c):
            s = 0.0
            for l in range(inner):
                s += X[i * inner + l] * Y[l * c + j]
            out[i * c + j] = s


cdef inline void _matmul_bt(double* out, double* X, double* Y, int r, int inner, int c) noexcept nogil:
    # out (r,c) = X (r,inner) @ Y.T where Y is (c,inner)
    cdef int i, j, l
    cdef double s
    for i in range(r):
        for j in range(c):
            s = 0.0
            for l in range(inner):
                s += X[i * inner + l] * Y[j * inner + l]
            out[i * c + j] = s


cdef inline void _symmetrize(double* M, int m) noexcept nogil:
    cdef int i, j
    cdef double v
    for i in range(m):
        for j in range(i + 1, m):
            v = 0.5 * (M[i * m + j] + M[j * m + i])
            M[i * m + j] = v
            M[j * m + i] = v


cdef int _chol(double* L, int m) noexcept nogil:
    # in-place lower Cholesky; returns -1 if not positive definite
    cdef int i, j, k
    cdef double s, d
    for j in range(m):
        s = L[j * m + j]
        for k in range(j):
            s -= L[j * m + k] * L[j * m + k]
        if s <= 0.0:
            return -1
        d = sqrt(s)
        L[j * m + j] = d
        for i in range(j + 1, m):
            s = L[i * m + j]
            for k in range(j):
                s -= L[i * m + k] * L[j * m + k]
            L[i * m + j] = s / d
    return 0


cdef void _chol_solve(double* L, double* B, double* X, int m, int ncol) noexcept nogil:
    # solve (L L.T) X = B, both (m, ncol)
    cdef int i, k, col
    cdef double s
    for col in range(ncol):
        for i in range(m):
            s = B[i * ncol + col]
            for k in range(i):
                s -= L[i * m + k] * X[k * ncol + col]
            X[i * ncol + col] = s / L[i * m + i]
        for i in range(m - 1, -1, -1):
            s = X[i * ncol + col]
            for k in range(i + 1, m):
                s -= L[k * m + i] * X[k * ncol + col]
            X[i * ncol + col] = s / L[i * m + i]


def filter_pass(double[:, ::1] A, double[::1] c, double[:, ::1] W,
                double[:, ::1] Wy, double[::1] a0, double[:, ::1] S0,
                double[:, :, ::1] Cs, double[:, ::1] Y):
    """Forward pass; returns (xs, Ps, aps, Sps, loglik, status, step)."""
    cdef int K = Y.shape[0]
    cdef int n = Y.shape[1]
    cdef int m = A.shape[0]
    if n > 2:
        return None, None, None, None, 0.0, STATUS_UNSUPPORTED, 0

    xs_arr = np.empty((K, m))
    Ps_arr = np.empty((K, m, m))
    aps_arr = np.empty((K, m))
    Sps_arr = np.empty((K, m, m))
    cdef double[:, ::1] xs = xs_arr
    cdef double[:, :, ::1] Ps = Ps_arr
    cdef double[:, ::1] aps = aps_arr
    cdef double[:, :, ::1] Sps = Sps_arr

    work = np.empty(m * m * 4 + m * n * 2 + m * 2 + 16)
    cdef double[::1] wk = work
    cdef double* S = &wk[0]
    cdef double* P = S + m * m
    cdef double* IKC = P + m * m
    cdef double* T1 = IKC + m * m
    cdef double* CS = T1 + m * m          # (n, m)
    cdef double* Kg = CS + m * n          # (m, n)
    cdef double* a = Kg + m * n
    cdef double* x = a + m
    cdef double* F = x + m                # (n, n) and small scratch
    cdef double* Finv = F + 4
    cdef double* f = Finv + 4
    cdef double* innov = f + 2

    cdef int i, j, l, r, k
    cdef double s, t, det, tr_half, disc, lo, hi, logdetF, quad, ll = 0.0
    cdef int status = STATUS_OK, step = 0

    for i in range(m):
        a[i] = a0[i]
        for j in range(m):
            S[i * m + j] = S0[i, j]
    _symmetrize(S, m)

    for k in range(K):
        for i in range(m):
            aps[k, i] = a[i]
            for j in range(m):
                Sps[k, i, j] = S[i * m + j]
        # CS = C @ S ; F = CS @ C.T + Wy
        for i in range(n):
            for j in range(m):
                s = 0.0
                for l in range(m):
                    s += Cs[k, i, l] * S[l * m + j]
                CS[i * m + j] = s
        for i in range(n):
            for j in range(n):
                s = Wy[i, j]
                for l in range(m):
                    s += CS[i * m + l] * Cs[k, j, l]
                F[i * 2 + j] = s
        if n == 2:
            s = 0.5 * (F[1] + F[2])
            F[1] = s
            F[2] = s
        # eigenvalue-based conditioning check, then explicit inverse
        if n == 1:
            lo = F[0]
            hi = F[0]
            if lo <= 0.0:
                status = STATUS_SINGULAR_F
                step = k
                break
            Finv[0] = 1.0 / F[0]
            logdetF = log(F[0])
        else:
            tr_half = 0.5 * (F[0] + F[3])
            disc = sqrt(0.25 * (F[0] - F[3]) * (F[0] - F[3]) + F[1] * F[1])
            lo = tr_half - disc
            hi = tr_half + disc
            if lo <= 0.0 or hi > _COND_LIMIT * lo:
                status = STATUS_SINGULAR_F
                step = k
                break
            det = F[0] * F[3] - F[1] * F[2]
            Finv[0] = F[3] / det
            Finv[1] = -F[1] / det
            Finv[2] = -F[2] / det
            Finv[3] = F[0] / det
            logdetF = log(det)
        for i in range(n):
            s = 0.0
            for l in range(m):
                s += Cs[k, i, l] * a[l]
            f[i] = s
            innov[i] = Y[k, i] - f[i]
        # Kg = CS.T @ Finv
        for i in range(m):
            for j in range(n):
                s = 0.0
                for l in range(n):
                    s += CS[l * m + i] * Finv[l * 2 + j]
                Kg[i * n + j] = s
        for i in range(m):
            s = a[i]
            for l in range(n):
                s += Kg[i * n + l] * innov[l]
            x[i] = s
        for i in range(m):
            for j in range(m):
                s = 0.0
                for l in range(n):
                    s += Kg[i * n + l] * Cs[k, l, j]
                IKC[i * m + j] = -s
            IKC[i * m + i] += 1.0
        # P = IKC S IKC.T + Kg Wy Kg.T   (Joseph form)
        _matmul(T1, IKC, S, m, m, m)
        _matmul_bt(P, T1, IKC, m, m, m)
        for i in range(m):
            for j in range(m):
                s = 0.0
                for l in range(n):
                    t = 0.0
                    for r in range(n):
                        t += Kg[i * n + r] * Wy[r, l]
                    s += t * Kg[j * n + l]
                P[i * m + j] += s
        _symmetrize(P, m)
        quad = 0.0
        for i in range(n):
            for j in range(n):
                quad += innov[i] * Finv[i * 2 + j] * innov[j]
        ll += -0.5 * (n * _LOG_2PI + logdetF + quad)
        for i in range(m):
            xs[k, i] = x[i]
            for j in range(m):
                Ps[k, i, j] = P[i * m + j]
        # a = c + A x ; S = A P A.T + W
        for i in range(m):
            s = c[i]
            for l in range(m):
                s += A[i, l] * x[l]
            a[i] = s
        _matmul(T1, &A[0, 0], P, m, m, m)
        _matmul_bt(S, T1, &A[0, 0], m, m, m)
        for i in range(m):
            for j in range(m):
                S[i * m + j] += W[i, j]
        _symmetrize(S, m)

    return xs_arr, Ps_arr, aps_arr, Sps_arr, ll, status, step


def smoother_pass(double[:, ::1] A, double[:, ::1] xs, double[:, :, ::1] Ps,
                  double[:, ::1] aps, double[:, :, ::1] Sps):
    """Backward pass; returns (ms, Vs, lag, status, step)."""
    cdef int K = xs.shape[0]
    cdef int m = xs.shape[1]
    ms_arr = np.array(xs, copy=True)
    Vs_arr = np.array(Ps, copy=True)
    lag_arr = np.zeros((K - 1 if K > 1 else 0, m, m))
    cdef double[:, ::1] ms = ms_arr
    cdef double[:, :, ::1] Vs = Vs_arr
    cdef double[:, :, ::1] lag = lag_arr

    work = np.empty(m * m * 5 + m)
    cdef double[::1] wk = work
    cdef double* L = &wk[0]
    cdef double* B0 = L + m * m
    cdef double* X = B0 + m * m
    cdef double* J = X + m * m
    cdef double* T1 = J + m * m
    cdef double* dv = T1 + m * m

    cdef int i, j, l, k
    cdef double s
    cdef int status = STATUS_OK, step = 0

    for k in range(K - 2, -1, -1):
        for i in range(m):
            for j in range(m):
                L[i * m + j] = Sps[k + 1, i, j]
                B0[i * m + j] = 0.0
        for i in range(m):
            for j in range(m):
                s = 0.0
                for l in range(m):
                    s += A[i, l] * Ps[k, l, j]
                B0[i * m + j] = s
        if _chol(L, m) != 0:
            status = STATUS_SINGULAR_PRED
            step = k
            break
        _chol_solve(L, B0, X, m, m)
        for i in range(m):
            for j in range(m):
                J[i * m + j] = X[j * m + i]
        for i in range(m):
            dv[i] = ms[k + 1, i] - aps[k + 1, i]
        for i in range(m):
            s = xs[k, i]
            for l in range(m):
                s += J[i * m + l] * dv[l]
            ms[k, i] = s
        # Vs[k] = Ps[k] + J (Vs[k+1] - Spred) J.T
        for i in range(m):
            for j in range(m):
                T1[i * m + j] = Vs[k + 1, i, j] - Sps[k + 1, i, j]
        _matmul(B0, J, T1, m, m, m)
        _matmul_bt(T1, B0, J, m, m, m)
        for i in range(m):
            for j in range(m):
                T1[i * m + j] += Ps[k, i, j]
        _symmetrize(T1, m)
        for i in range(m):
            for j in range(m):
                Vs[k, i, j] = T1[i * m + j]
        # lag[k] = Vs[k+1] @ J.T
        for i in range(m):
            for j in range(m):
                s = 0.0
                for l in range(m):
                    s += Vs[k + 1, i, l] * J[j * m + l]
                lag[k, i, j] = s

    return ms_arr, Vs_arr, lag_arr, status, step
