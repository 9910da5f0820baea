"""Euclidean projections used by the splitting iteration."""

import numpy as np

from ..errors import NotPD

SECULAR_TOL = 1e-12


def project_ellipsoid(point, shape, level=1.0):
    """Euclidean projection of ``point`` onto ``{x : x' S x <= level}``.

    Returns the input unchanged when it already satisfies the constraint.
    Otherwise the projection is ``x = (I + t S)^-1 point`` for the unique
    ``t >= 0`` solving the scalar secular equation ``x' S x = level``, found
    by safeguarded Newton on the eigendecomposition of ``S``.
    """
    S = np.asarray(shape, dtype=float)
    p = np.asarray(point, dtype=float)
    if not np.allclose(S, S.T, atol=1e-10, rtol=0.0):
        raise NotPD("ellipsoid shape matrix must be symmetric")
    lam, V = np.linalg.eigh(0.5 * (S + S.T))
    if lam.min() <= 0.0:
        raise NotPD(f"ellipsoid shape matrix has eigenvalue {lam.min():.3e} <= 0")
    return project_ellipsoid_scaled(p, V, lam, level)


def project_ellipsoid_scaled(p, V, lam, level):
    """Projection given the eigendecomposition ``S = V diag(lam) V'``."""
    w = V.T @ p
    val = float(np.sum(lam * w * w))
    if val <= level:
        return p.copy()
    t = secular_root(lam, w, level)
    return V @ (w / (1.0 + t * lam))


def secular_root(lam, w, level, tol=SECULAR_TOL, max_iter=200):
    """Root of g(t) = sum lam_i w_i^2 / (1 + t lam_i)^2 - level for t >= 0.

    g is strictly decreasing on t >= 0 with g(0) > 0 (point outside), so the
    root is unique.  Newton steps are safeguarded by a bisection bracket.
    """
    lw2 = lam * w * w

    def g(t):
        d = 1.0 + t * lam
        return float(np.sum(lw2 / (d * d))) - level

    t_lo, t_hi = 0.0, 1.0
    while g(t_hi) > 0.0:
        t_lo = t_hi
        t_hi *= 2.0
        if t_hi > 1e18:
            raise NotPD("secular equation bracket exploded; shape matrix ill-posed")
    t = 0.5 * (t_lo + t_hi)
    for _ in range(max_iter):
        d = 1.0 + t * lam
        gval = float(np.sum(lw2 / (d * d))) - level
        if abs(gval) <= tol * max(1.0, level):
            return t
        if gval > 0.0:
            t_lo = t
        else:
            t_hi = t
        gprime = -2.0 * float(np.sum(lam * lw2 / (d * d * d)))
        step = t - gval / gprime
        t = step if t_lo < step < t_hi else 0.5 * (t_lo + t_hi)
    return t
