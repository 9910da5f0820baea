"""Pure-NumPy ADMM iteration loop.

This is the fallback backend; the compiled extension in ``_core.pyx``
implements the same loop with BLAS calls.  Both consume the preprocessed
(scaled) problem data assembled by :class:`dsmpc.solver.qp.CentralizedWorkspace`
and must produce the same iterates up to floating-point noise.
"""

import numpy as np

from .projections import project_ellipsoid_scaled


def run_admm(work, x, y, z, max_iter, check_every):
    """Run scaled ADMM iterations in place; returns (iters, r_prim, r_dual, converged).

    ``work`` is a namespace with the preprocessed arrays (see
    ``CentralizedWorkspace``): factor ``L`` of the reduced KKT matrix, scaled
    ``P``, ``q``, ``A``, per-row penalties ``rho``, interval bounds, ellipsoid
    data and the unscaling diagonals ``Dinv``, ``Einv`` and cost scale ``c``.
    """
    P, q, A = work.P_s, work.q_s, work.A_s
    rho, inv_rho = work.rho_vec, work.inv_rho_vec
    lo, hi = work.lo_s, work.hi_s
    sigma, alpha = work.sigma, work.alpha
    solve_kkt = work.solve_kkt

    log = getattr(work, "log", None)

    r_prim = np.inf
    r_dual = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        rhs = sigma * x - q + A.T @ (rho * z - y)
        x_t = solve_kkt(rhs)
        z_t = A @ x_t
        x = alpha * x_t + (1.0 - alpha) * x
        v = alpha * z_t + (1.0 - alpha) * z + inv_rho * y
        z_new = np.clip(v, lo, hi)
        for ell in work.ellipsoids_s:
            seg = slice(ell.start, ell.start + ell.dim)
            z_new[seg] = project_ellipsoid_scaled(v[seg], ell.eigvecs, ell.eigvals,
                                                  ell.level)
        y = y + rho * (alpha * z_t + (1.0 - alpha) * z - z_new)
        z = z_new

        if it % check_every == 0 or it == max_iter:
            r_prim, r_dual, eps_p, eps_d = residuals(work, x, y, z)
            if log is not None:
                log.append((it, r_prim, r_dual))
            if r_prim <= eps_p and r_dual <= eps_d:
                converged = True
                break
    return x, y, z, it, r_prim, r_dual, converged


def residuals(work, x, y, z):
    """Unscaled residual norms and their termination thresholds."""
    Ax = work.A_s @ x
    Px = work.P_s @ x
    Aty = work.A_s.T @ y
    Einv, Dinv, cinv = work.Einv, work.Dinv, 1.0 / work.c
    r_prim = np.max(np.abs(Einv * (Ax - z))) if Ax.size else 0.0
    scale_p = max(np.max(np.abs(Einv * Ax)), np.max(np.abs(Einv * z))) if Ax.size else 0.0
    dual_vec = Dinv * (Px + work.q_s + Aty)
    r_dual = cinv * np.max(np.abs(dual_vec))
    scale_d = cinv * max(
        np.max(np.abs(Dinv * Px)),
        np.max(np.abs(Dinv * Aty)) if Aty.size else 0.0,
        np.max(np.abs(Dinv * work.q_s)),
    )
    eps_p = work.eps_abs + work.eps_rel * scale_p
    eps_d = work.eps_abs + work.eps_rel * scale_d
    return r_prim, r_dual, eps_p, eps_d
