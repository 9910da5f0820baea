"""Operator-splitting solver for quadratic programs with interval rows and
ellipsoid blocks.

Canonical problem::

    minimize    1/2 x' P x + q' x
    subject to  lo <= (A x)_interval <= hi
                (A x)_block' S_block (A x)_block <= level   per ellipsoid block

Equalities are intervals of zero width.  The iteration alternates a
regularized linear-system solve on the cost+operator KKT matrix (factorized
once and reused across solves that only change ``q``/``lo``/``hi``), a
projection of slack segments onto the intervals and ellipsoids, and a relaxed
dual update.  Problem data is Ruiz-equilibrated up front; residuals are
reported in the original (unscaled) variables.

The inner loop runs in the compiled extension when available and otherwise
in a NumPy fallback; see ``dsmpc.solver.backend_name()``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np
import scipy.linalg as sla

from ..errors import NumericalBreakdown, NotPD
from . import _backend, _reference

# Equality rows (zero-width intervals) get a stiffer penalty, which drives
# their residuals orders of magnitude below the inequality residuals.
EQUALITY_RHO_SCALE = 1e3
MIN_SCALING = 1e-4
MAX_SCALING = 1e4


@dataclass(frozen=True)
class SolverSettings:
    """Tuning knobs of the splitting iteration.

    ``residual_log`` names a CSV file; when set, every residual check of every
    solve appends an ``iteration,r_prim,r_dual`` row (this forces the NumPy
    iteration loop for that workspace).
    """

    rho: float = 1.0
    alpha: float = 1.6
    sigma: float = 1e-6
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 20000
    check_every: int = 20
    warm_start: bool = True
    scaling_iters: int = 10
    residual_log: str | None = None

    def __post_init__(self):
        if self.rho <= 0 or self.sigma <= 0:
            raise ValueError("rho and sigma must be positive")
        if not 1.0 < self.alpha <= 2.0:
            raise ValueError("relaxation alpha must lie in (1, 2]")
        if self.eps_abs <= 0 or self.eps_rel < 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass(frozen=True)
class EllipsoidBlock:
    """Rows ``start : start+dim`` of the operator form one quadratic block."""

    start: int
    shape: np.ndarray
    level: float = 1.0

    @property
    def dim(self):
        return self.shape.shape[0]


@dataclass
class ConicQp:
    """Solver-ready problem data; validated on construction."""

    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    ellipsoids: tuple = ()

    def __post_init__(self):
        self.P = np.ascontiguousarray(self.P, dtype=float)
        self.q = np.ascontiguousarray(self.q, dtype=float)
        self.A = np.ascontiguousarray(self.A, dtype=float)
        self.lo = np.ascontiguousarray(self.lo, dtype=float)
        self.hi = np.ascontiguousarray(self.hi, dtype=float)
        self.ellipsoids = tuple(self.ellipsoids)
        nv = self.P.shape[0]
        mr = self.A.shape[0]
        if self.P.shape != (nv, nv) or self.q.shape != (nv,):
            raise ValueError(f"cost shapes inconsistent: P {self.P.shape}, q {self.q.shape}")
        if self.A.shape[1] != nv or self.lo.shape != (mr,) or self.hi.shape != (mr,):
            raise ValueError("constraint operator shapes inconsistent")
        if not np.allclose(self.P, self.P.T, atol=1e-9, rtol=0.0):
            raise ValueError("cost matrix must be symmetric")
        if nv and float(np.linalg.eigvalsh(self.P).min()) < -1e-9:
            raise ValueError("cost matrix must be positive semidefinite")
        mask = self.interval_mask()
        if np.any(self.lo[mask] > self.hi[mask] + 1e-12):
            raise ValueError("interval rows must satisfy lo <= hi")
        for ell in self.ellipsoids:
            if ell.start < 0 or ell.start + ell.dim > mr:
                raise ValueError("ellipsoid block exceeds the operator rows")
            S = np.asarray(ell.shape, dtype=float)
            if not np.allclose(S, S.T, atol=1e-10, rtol=0.0):
                raise NotPD("ellipsoid shape matrix must be symmetric")
            if float(np.linalg.eigvalsh(S).min()) <= 0.0:
                raise NotPD("ellipsoid shape matrix must be positive definite")

    @property
    def nvar(self):
        return self.P.shape[0]

    @property
    def nrow(self):
        return self.A.shape[0]

    def interval_mask(self):
        mask = np.ones(self.A.shape[0], dtype=bool)
        for ell in self.ellipsoids:
            mask[ell.start:ell.start + ell.dim] = False
        return mask

    def objective(self, x):
        return float(0.5 * x @ self.P @ x + self.q @ x)


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    status: str
    iterations: int
    r_prim: float
    r_dual: float
    objective: float


def _ruiz_equilibrate(P, q, A, iters):
    """Modified Ruiz scaling of the stacked [[P, A'], [A, 0]] matrix.

    Returns (D, E, c): variable scaling, row scaling, cost scaling.
    """
    nv, mr = P.shape[0], A.shape[0]
    D = np.ones(nv)
    E = np.ones(mr)
    c = 1.0
    Ps, qs, As = P.copy(), q.copy(), A.copy()
    for _ in range(iters):
        col_p = np.max(np.abs(Ps), axis=0) if nv else np.zeros(0)
        col_a = np.max(np.abs(As), axis=0) if mr else np.zeros(nv)
        dx = np.sqrt(np.maximum(col_p, col_a))
        dx[dx == 0.0] = 1.0
        dx = 1.0 / np.clip(dx, MIN_SCALING, MAX_SCALING)
        dz = np.sqrt(np.max(np.abs(As), axis=1)) if mr else np.zeros(0)
        dz[dz == 0.0] = 1.0
        dz = 1.0 / np.clip(dz, MIN_SCALING, MAX_SCALING)

        Ps = Ps * dx[:, None] * dx[None, :]
        qs = qs * dx
        As = As * dz[:, None] * dx[None, :]
        D *= dx
        E *= dz

        col_norms = np.max(np.abs(Ps), axis=0) if nv else np.zeros(0)
        denom = max(float(np.mean(col_norms)) if nv else 0.0,
                    float(np.max(np.abs(qs))) if nv else 0.0)
        gamma = 1.0 / np.clip(denom, MIN_SCALING**2, MAX_SCALING**2) \
            if denom > 0.0 else 1.0
        Ps *= gamma
        qs *= gamma
        c *= gamma
    return D, E, c


class CentralizedWorkspace:
    """Preprocessed problem plus a reusable factorization.

    Solves with updated ``q``, ``lo`` and ``hi`` reuse the factorization as
    long as the equality pattern (``lo == hi``) is unchanged; the pattern is
    re-detected and the KKT matrix refactorized otherwise.
    """

    def __init__(self, qp, settings=None):
        self.qp = qp
        self.settings = settings or SolverSettings()
        st = self.settings
        if st.scaling_iters > 0:
            D, E, c = _ruiz_equilibrate(qp.P, qp.q, qp.A, st.scaling_iters)
        else:
            D, E, c = np.ones(qp.nvar), np.ones(qp.nrow), 1.0
        self.D, self.E, self.c = D, E, c
        self.P_s = np.ascontiguousarray(c * qp.P * D[:, None] * D[None, :])
        self.A_s = np.ascontiguousarray(qp.A * E[:, None] * D[None, :])
        self._interval = qp.interval_mask()
        self._ell_raw = qp.ellipsoids
        self._x = np.zeros(qp.nvar)
        self._y = np.zeros(qp.nrow)
        self._z = np.zeros(qp.nrow)
        self._have_warm = False
        self._eq_pattern = None
        self._L = None
        self.set_vectors(qp.q, qp.lo, qp.hi)

    # -- data updates ------------------------------------------------------

    def set_vectors(self, q=None, lo=None, hi=None):
        if q is not None:
            self.q = np.asarray(q, dtype=float)
            self.q_s = np.ascontiguousarray(self.c * self.D * self.q)
        if lo is not None or hi is not None:
            if lo is not None:
                self.lo = np.asarray(lo, dtype=float)
            if hi is not None:
                self.hi = np.asarray(hi, dtype=float)
            lo_s = np.where(np.isfinite(self.lo), self.E * self.lo, -np.inf)
            hi_s = np.where(np.isfinite(self.hi), self.E * self.hi, np.inf)
            # ellipsoid rows are projected, never clamped
            lo_s[~self._interval] = -np.inf
            hi_s[~self._interval] = np.inf
            self.lo_s = np.ascontiguousarray(lo_s)
            self.hi_s = np.ascontiguousarray(hi_s)
            pattern = self._interval & np.isfinite(self.lo) & np.isfinite(self.hi) \
                & (np.abs(self.hi - self.lo) < 1e-15)
            if self._eq_pattern is None or not np.array_equal(pattern, self._eq_pattern):
                self._eq_pattern = pattern
                self._refactorize()

    def _refactorize(self):
        st = self.settings
        rho_vec = np.full(self.qp.nrow, st.rho)
        rho_vec[self._eq_pattern] = st.rho * EQUALITY_RHO_SCALE
        self.rho_vec = np.ascontiguousarray(rho_vec)
        self.inv_rho_vec = np.ascontiguousarray(1.0 / rho_vec)
        M = self.P_s + st.sigma * np.eye(self.qp.nvar) \
            + (self.A_s * rho_vec[:, None]).T @ self.A_s
        try:
            self._L = sla.cholesky(M, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdown(f"KKT factorization failed: {exc}") from exc
        except sla.LinAlgError as exc:  # scipy's own error type
            raise NumericalBreakdown(f"KKT factorization failed: {exc}") from exc
        self._prepare_ellipsoids()

    def _prepare_ellipsoids(self):
        blocks = []
        for ell in self._ell_raw:
            seg = slice(ell.start, ell.start + ell.dim)
            Einv_seg = 1.0 / self.E[seg]
            S_scaled = ell.shape * Einv_seg[:, None] * Einv_seg[None, :]
            lam, V = np.linalg.eigh(0.5 * (S_scaled + S_scaled.T))
            if lam.min() <= 0.0:
                raise NotPD("scaled ellipsoid shape lost positive definiteness")
            blocks.append(SimpleNamespace(
                start=ell.start, dim=ell.dim, level=float(ell.level),
                eigvals=np.ascontiguousarray(lam),
                eigvecs=np.ascontiguousarray(V),
            ))
        self.ellipsoids_s = tuple(blocks)

    # -- solving -----------------------------------------------------------

    def solve_kkt(self, rhs):
        return sla.cho_solve((self._L, True), rhs, check_finite=False)

    def reset_warm(self):
        self._x = np.zeros(self.qp.nvar)
        self._y = np.zeros(self.qp.nrow)
        self._z = np.zeros(self.qp.nrow)
        self._have_warm = False

    def warm_start(self, x=None, y=None, z=None):
        if x is not None:
            self._x = np.ascontiguousarray(x / self.D)
        if y is not None:
            self._y = np.ascontiguousarray(self.c * y / self.E)
        if z is not None:
            self._z = np.ascontiguousarray(self.E * z)
        self._have_warm = True

    def solve(self, q=None, lo=None, hi=None, warm=None, max_iter=None):
        """Run the iteration; returns a :class:`QpSolution` (unscaled)."""
        st = self.settings
        self.set_vectors(q, lo, hi)
        if warm is not None:
            self.warm_start(*warm)
        if not (st.warm_start and self._have_warm):
            self._x = np.zeros(self.qp.nvar)
            self._y = np.zeros(self.qp.nrow)
            self._z = np.zeros(self.qp.nrow)

        log = [] if st.residual_log else None
        work = SimpleNamespace(
            P_s=self.P_s, q_s=self.q_s, A_s=self.A_s,
            rho_vec=self.rho_vec, inv_rho_vec=self.inv_rho_vec,
            lo_s=self.lo_s, hi_s=self.hi_s,
            sigma=st.sigma, alpha=st.alpha,
            ellipsoids_s=self.ellipsoids_s,
            Dinv=1.0 / self.D, Einv=1.0 / self.E, c=self.c,
            eps_abs=st.eps_abs, eps_rel=st.eps_rel,
            solve_kkt=self.solve_kkt, L=self._L,
            log=log,
        )
        runner = _reference.run_admm if log is not None else _backend.run_admm
        x, y, z, iters, r_prim, r_dual, converged = runner(
            work, self._x.copy(), self._y.copy(), self._z.copy(),
            max_iter or st.max_iter, st.check_every,
        )
        if log is not None:
            new_file = not os.path.exists(st.residual_log)
            with open(st.residual_log, "a", encoding="utf-8") as fh:
                if new_file:
                    fh.write("iteration,r_prim,r_dual\n")
                for row in log:
                    fh.write(f"{row[0]},{row[1]:.6e},{row[2]:.6e}\n")
        self._x, self._y, self._z = x, y, z
        self._have_warm = True
        x_u = self.D * x
        y_u = self.E * y / self.c
        z_u = z / self.E
        status = "optimal" if converged else "max_iter"
        return QpSolution(
            x=x_u, y=y_u, z=z_u, status=status, iterations=iters,
            r_prim=r_prim, r_dual=r_dual,
            objective=float(0.5 * x_u @ self.qp.P @ x_u + self.q @ x_u),
        )


def solve_centralized(qp, settings=None, warm=None):
    """One-shot centralized solve of a :class:`ConicQp`."""
    ws = CentralizedWorkspace(qp, settings)
    return ws.solve(warm=warm)
