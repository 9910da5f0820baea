# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled ADMM iteration loop.

Mirrors ``dsmpc.solver._reference.run_admm`` operation for operation; the two
backends must agree on every iterate up to floating-point accumulation order.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, fabs
from scipy.linalg.cython_blas cimport dgemv, dtrsv

cnp.import_array()


cdef void _mat_vec(double[:, ::1] A, double[::1] x, double[::1] out) noexcept nogil:
    # out = A @ x for C-contiguous A (mr, nv): BLAS sees the Fortran view A.T
    cdef int mr = A.shape[0]
    cdef int nv = A.shape[1]
    cdef int inc = 1
    cdef double one = 1.0, zero = 0.0
    if mr == 0 or nv == 0:
        return
    dgemv("T", &nv, &mr, &one, &A[0, 0], &nv, &x[0], &inc, &zero, &out[0], &inc)


cdef void _mat_tvec(double[:, ::1] A, double[::1] x, double[::1] out) noexcept nogil:
    # out = A.T @ x
    cdef int mr = A.shape[0]
    cdef int nv = A.shape[1]
    cdef int inc = 1
    cdef double one = 1.0, zero = 0.0
    if mr == 0 or nv == 0:
        return
    dgemv("N", &nv, &mr, &one, &A[0, 0], &nv, &x[0], &inc, &zero, &out[0], &inc)


cdef void _chol_solve(double[:, ::1] L, double[::1] x) noexcept nogil:
    # in place: x <- (L L')^-1 x, L lower triangular C-contiguous
    cdef int n = L.shape[0]
    cdef int inc = 1
    if n == 0:
        return
    # memory of row-major L is the Fortran upper matrix U = L'
    dtrsv("U", "T", "N", &n, &L[0, 0], &n, &x[0], &inc)
    dtrsv("U", "N", "N", &n, &L[0, 0], &n, &x[0], &inc)


cdef double _secular_root(double* lam, double* w, int k, double level) noexcept nogil:
    cdef double t_lo = 0.0, t_hi = 1.0, t, gval, gprime, d, step
    cdef int i, it
    while True:
        gval = -level
        for i in range(k):
            d = 1.0 + t_hi * lam[i]
            gval += lam[i] * w[i] * w[i] / (d * d)
        if gval <= 0.0:
            break
        t_lo = t_hi
        t_hi *= 2.0
        if t_hi > 1e18:
            return t_hi
    t = 0.5 * (t_lo + t_hi)
    for it in range(200):
        gval = -level
        gprime = 0.0
        for i in range(k):
            d = 1.0 + t * lam[i]
            gval += lam[i] * w[i] * w[i] / (d * d)
            gprime += -2.0 * lam[i] * lam[i] * w[i] * w[i] / (d * d * d)
        if fabs(gval) <= 1e-12 * (1.0 if level < 1.0 else level):
            return t
        if gval > 0.0:
            t_lo = t
        else:
            t_hi = t
        step = t - gval / gprime
        if t_lo < step < t_hi:
            t = step
        else:
            t = 0.5 * (t_lo + t_hi)
    return t


def run_admm(work, cnp.ndarray[double, ndim=1] x_in,
             cnp.ndarray[double, ndim=1] y_in,
             cnp.ndarray[double, ndim=1] z_in,
             int max_iter, int check_every):
    """Drop-in replacement for the NumPy loop; see ``_reference.run_admm``."""
    cdef double[:, ::1] P = np.ascontiguousarray(work.P_s)
    cdef double[:, ::1] A = np.ascontiguousarray(work.A_s)
    cdef double[:, ::1] L = np.ascontiguousarray(work.L)
    cdef double[::1] q = np.ascontiguousarray(work.q_s)
    cdef double[::1] rho = np.ascontiguousarray(work.rho_vec)
    cdef double[::1] inv_rho = np.ascontiguousarray(work.inv_rho_vec)
    cdef double[::1] lo = np.ascontiguousarray(work.lo_s)
    cdef double[::1] hi = np.ascontiguousarray(work.hi_s)
    cdef double[::1] Dinv = np.ascontiguousarray(work.Dinv)
    cdef double[::1] Einv = np.ascontiguousarray(work.Einv)
    cdef double sigma = work.sigma
    cdef double alpha = work.alpha
    cdef double cinv = 1.0 / work.c
    cdef double eps_abs = work.eps_abs
    cdef double eps_rel = work.eps_rel

    ells = work.ellipsoids_s
    cdef int n_ell = len(ells)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ell_start = np.array(
        [e.start for e in ells], dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ell_dim = np.array(
        [e.dim for e in ells], dtype=np.int64)
    cdef cnp.ndarray[double, ndim=1] ell_level = np.array(
        [e.level for e in ells], dtype=float)
    cdef int max_ell = 0
    cdef int b
    for b in range(n_ell):
        if ell_dim[b] > max_ell:
            max_ell = <int> ell_dim[b]
    # per-block eigendata, concatenated
    cdef cnp.ndarray[cnp.int64_t, ndim=1] vec_off = np.zeros(n_ell + 1, dtype=np.int64)
    for b in range(n_ell):
        vec_off[b + 1] = vec_off[b] + ell_dim[b]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] mat_off = np.zeros(n_ell + 1, dtype=np.int64)
    for b in range(n_ell):
        mat_off[b + 1] = mat_off[b] + ell_dim[b] * ell_dim[b]
    cdef cnp.ndarray[double, ndim=1] ell_lam = (
        np.concatenate([np.ascontiguousarray(e.eigvals) for e in ells])
        if n_ell else np.zeros(0))
    cdef cnp.ndarray[double, ndim=1] ell_V = (
        np.concatenate([np.ascontiguousarray(e.eigvecs).ravel() for e in ells])
        if n_ell else np.zeros(0))

    cdef int nv = P.shape[0]
    cdef int mr = A.shape[0]
    cdef double[::1] x = x_in
    cdef double[::1] y = y_in
    cdef double[::1] z = z_in
    cdef double[::1] rhs = np.zeros(nv)
    cdef double[::1] x_t = np.zeros(nv)
    cdef double[::1] z_t = np.zeros(mr)
    cdef double[::1] z_rel = np.zeros(mr)
    cdef double[::1] v = np.zeros(mr)
    cdef double[::1] tmp_m = np.zeros(mr)
    cdef double[::1] wbuf = np.zeros(max_ell if max_ell else 1)
    cdef double[::1] Px = np.zeros(nv)
    cdef double[::1] Aty = np.zeros(nv)

    cdef int it = 0, i, j, k, inc = 1, seg0
    cdef double one = 1.0, zero = 0.0
    cdef double r_prim = INFINITY, r_dual = INFINITY
    cdef double scale_p, scale_d, eps_p, eps_d, val, t, a, s1, s2
    cdef bint converged = False
    cdef double* lam_p
    cdef double* V_p
    cdef int check

    with nogil:
        for it in range(1, max_iter + 1):
            # rhs = sigma*x - q + A'(rho*z - y)
            for i in range(mr):
                tmp_m[i] = rho[i] * z[i] - y[i]
            _mat_tvec(A, tmp_m, rhs)
            for j in range(nv):
                rhs[j] += sigma * x[j] - q[j]
                x_t[j] = rhs[j]
            _chol_solve(L, x_t)
            _mat_vec(A, x_t, z_t)
            for j in range(nv):
                x[j] = alpha * x_t[j] + (1.0 - alpha) * x[j]
            for i in range(mr):
                z_rel[i] = alpha * z_t[i] + (1.0 - alpha) * z[i]
                v[i] = z_rel[i] + inv_rho[i] * y[i]
                # interval projection (ellipsoid rows carry infinite bounds)
                if v[i] < lo[i]:
                    v[i] = lo[i]
                elif v[i] > hi[i]:
                    v[i] = hi[i]
            for b in range(n_ell):
                seg0 = <int> ell_start[b]
                k = <int> ell_dim[b]
                lam_p = &ell_lam[0] + vec_off[b]
                V_p = &ell_V[0] + mat_off[b]
                # wbuf = V' v_seg ; V row-major (k,k) -> Fortran view is V'
                dgemv("N", &k, &k, &one, V_p, &k, &v[seg0], &inc, &zero, &wbuf[0], &inc)
                val = 0.0
                for i in range(k):
                    val += lam_p[i] * wbuf[i] * wbuf[i]
                if val > ell_level[b]:
                    t = _secular_root(lam_p, &wbuf[0], k, ell_level[b])
                    for i in range(k):
                        wbuf[i] = wbuf[i] / (1.0 + t * lam_p[i])
                    dgemv("T", &k, &k, &one, V_p, &k, &wbuf[0], &inc, &zero,
                          &v[seg0], &inc)
            for i in range(mr):
                y[i] = y[i] + rho[i] * (z_rel[i] - v[i])
                z[i] = v[i]

            check = 1 if (it % check_every == 0 or it == max_iter) else 0
            if check:
                # unscaled residuals; z_t reused as A x
                _mat_vec(A, x, z_t)
                _mat_vec(P, x, Px)
                _mat_tvec(A, y, Aty)
                r_prim = 0.0
                scale_p = 0.0
                for i in range(mr):
                    a = fabs(Einv[i] * (z_t[i] - z[i]))
                    if a > r_prim:
                        r_prim = a
                    s1 = fabs(Einv[i] * z_t[i])
                    s2 = fabs(Einv[i] * z[i])
                    if s1 > scale_p:
                        scale_p = s1
                    if s2 > scale_p:
                        scale_p = s2
                r_dual = 0.0
                scale_d = 0.0
                for j in range(nv):
                    a = fabs(Dinv[j] * (Px[j] + q[j] + Aty[j])) * cinv
                    if a > r_dual:
                        r_dual = a
                    s1 = fabs(Dinv[j] * Px[j]) * cinv
                    s2 = fabs(Dinv[j] * Aty[j]) * cinv
                    val = fabs(Dinv[j] * q[j]) * cinv
                    if s1 > scale_d:
                        scale_d = s1
                    if s2 > scale_d:
                        scale_d = s2
                    if val > scale_d:
                        scale_d = val
                eps_p = eps_abs + eps_rel * scale_p
                eps_d = eps_abs + eps_rel * scale_d
                if r_prim <= eps_p and r_dual <= eps_d:
                    converged = True
                    break

    return x_in, y_in, z_in, it, r_prim, r_dual, converged
