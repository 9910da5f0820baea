"""Offline synthesis: quadratic cost matrix, tracking terminal set, steady states.

Three ingredients are produced here.  The cost matrix ``P`` solves the
closed-loop Lyapunov equation ``A_K' P A_K - P = -Q - K' R K``.  The terminal
set is a level set of a block-diagonal quadratic form over the augmented
variable (Delta z, z_s, v_s): invariance under the tube gain is inherited
from ``P`` and the level is calibrated so the set's support respects every
tightened constraint row.  The steady-state oracle computes the admissible
steady state closest (in the tracking norm) to a requested output reference;
the closed loop converges to it in expectation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import (
    DegenerateConstraint,
    InfeasibleSteadyStateSet,
    InvarianceCertificateFailed,
    NotSchurStable,
)
from .model import spectral_radius
from .solver import CentralizedWorkspace, ConicQp, EllipsoidBlock, SolverSettings

CERT_TOL = 1e-9
LYAP_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class LyapunovCost:
    """Solution of the closed-loop Lyapunov equation, with diagnostics.

    ``offblock_mass`` is the largest magnitude of P outside the per-subsystem
    diagonal blocks; a large value means the cost does not separate across
    subsystems and the distributed formulation is approximate for this model.
    """

    P: np.ndarray
    residual: float
    offblock_mass: float


def solve_lyapunov_cost(A_K, Q, R, K, state_offsets=None, tol=1e-10):
    """Solve A_K' P A_K - P = -(Q + K'RK) by the squaring iteration."""
    A_K = np.asarray(A_K, dtype=float)
    rho = spectral_radius(A_K)
    if rho >= 1.0:
        raise NotSchurStable(f"rho(A_K) = {rho:.6f} >= 1; Lyapunov equation unsolvable")
    W = Q + K.T @ R @ K
    W = 0.5 * (W + W.T)
    S = W.copy()
    Ac = A_K.copy()
    for _ in range(200):
        Sn = S + Ac.T @ S @ Ac
        Sn = 0.5 * (Sn + Sn.T)
        Ac = Ac @ Ac
        if np.max(np.abs(Sn - S)) < 0.1 * tol:
            S = Sn
            break
        S = Sn
    residual = float(np.max(np.abs(A_K.T @ S @ A_K - S + W)))
    if residual > LYAP_RESIDUAL_TOL:
        raise NotSchurStable(
            f"Lyapunov residual {residual:.3e} exceeds {LYAP_RESIDUAL_TOL:.1e}"
        )
    offblock = 0.0
    if state_offsets is not None:
        mask = np.ones_like(S, dtype=bool)
        for i in range(len(state_offsets) - 1):
            sl = slice(int(state_offsets[i]), int(state_offsets[i + 1]))
            mask[sl, sl] = False
        offblock = float(np.max(np.abs(S[mask]))) if mask.any() else 0.0
    return LyapunovCost(P=S, residual=residual, offblock_mass=offblock)


@dataclass(frozen=True)
class TerminalSet:
    """Calibrated quadratic terminal set for tracking.

    The set is ``{(dz, zs, vs) : dz'P_f dz + zs'P_z zs + vs'P_v vs <= 1}``
    with all three matrices already divided by the calibration scale squared.
    ``level_scale`` records that scale; ``gamma_alloc`` is the per-subsystem
    level split used by the distributed formulation.
    """

    P_f: np.ndarray
    P_z: np.ndarray
    P_v: np.ndarray
    level_scale: float
    gamma_alloc: np.ndarray

    @property
    def n(self):
        return self.P_f.shape[0]

    @property
    def m(self):
        return self.P_v.shape[0]

    def value(self, dz, zs, vs):
        dz = np.asarray(dz, dtype=float)
        zs = np.asarray(zs, dtype=float)
        vs = np.asarray(vs, dtype=float)
        return float(dz @ self.P_f @ dz + zs @ self.P_z @ zs + vs @ self.P_v @ vs)

    def augmented_shape(self):
        n, m = self.n, self.m
        S = np.zeros((2 * n + m, 2 * n + m))
        S[:n, :n] = self.P_f
        S[n:2 * n, n:2 * n] = self.P_z
        S[2 * n:, 2 * n:] = self.P_v
        return S


def _coordinate_extents(poly):
    """Symmetric per-coordinate radius of a polytope containing the origin."""
    d = poly.dim
    ext = np.empty(d)
    for j in range(d):
        vals = []
        for sign in (1.0, -1.0):
            c = np.zeros(d)
            c[j] = -sign
            res = linprog(c, A_ub=poly.H, b_ub=poly.h,
                          bounds=[(None, None)] * d, method="highs")
            if res.status != 0:
                raise DegenerateConstraint(
                    f"coordinate-extent LP failed on coordinate {j} (status {res.status})"
                )
            vals.append(abs(res.fun))
        ext[j] = min(vals)
    return ext


def build_terminal_set(model, P_f, Z_f, V_f):
    """Calibrate the tracking terminal set against the terminal-stage polytopes.

    The steady-state blocks are shaped to the constraint geometry (diagonal,
    semiaxes equal to the coordinate extents of the tightened sets) so the
    admissible steady-state range is not needlessly squashed, then one global
    scale fits the largest level set whose support respects every row: the
    support of ``{a : a'Pa <= 1}`` along a row ``g`` is ``sqrt(g'P^-1 g)``.
    Invariance is certified before scaling, which leaves it untouched.
    """
    if isinstance(P_f, LyapunovCost):
        P_f = P_f.P
    P_f = np.asarray(P_f, dtype=float)
    n, m = model.n, model.m
    K = model.K

    if np.any(Z_f.h <= 0.0) or np.any(V_f.h <= 0.0):
        bad = int(np.argmin(np.concatenate([Z_f.h, V_f.h])))
        raise DegenerateConstraint(
            f"tightened row {bad} has nonpositive offset; the zero steady state "
            "is not interior"
        )

    s_z = _coordinate_extents(Z_f)
    s_u = _coordinate_extents(V_f)
    P_z = np.diag(1.0 / s_z**2)
    P_v = np.diag(1.0 / s_u**2)

    # invariance: the augmented map keeps (zs, vs) fixed and contracts dz
    A_K = model.A_K
    P_tr = _blockdiag3(P_f, P_z, P_v)
    A_cl = np.zeros((2 * n + m, 2 * n + m))
    A_cl[:n, :n] = A_K
    A_cl[n:2 * n, n:2 * n] = np.eye(n)
    A_cl[2 * n:, 2 * n:] = np.eye(m)
    gap = np.linalg.eigvalsh(P_tr - A_cl.T @ P_tr @ A_cl).min()
    if gap < -CERT_TOL:
        raise InvarianceCertificateFailed(
            f"terminal quadratic is not invariant: certificate eigenvalue {gap:.3e}"
        )

    Pf_inv = np.linalg.inv(P_f)
    Pz_inv = np.diag(s_z**2)
    Pv_inv = np.diag(s_u**2)
    # state rows touch both dz and zs; input rows touch dz through K and vs
    sup2_state = np.einsum("ij,jk,ik->i", Z_f.H, Pf_inv, Z_f.H) \
        + np.einsum("ij,jk,ik->i", Z_f.H, Pz_inv, Z_f.H)
    LK = V_f.H @ K
    sup2_input = np.einsum("ij,jk,ik->i", LK, Pf_inv, LK) \
        + np.einsum("ij,jk,ik->i", V_f.H, Pv_inv, V_f.H)
    lam = min(float(np.min(Z_f.h / np.sqrt(sup2_state))),
              float(np.min(V_f.h / np.sqrt(sup2_input))))

    M = model.M
    return TerminalSet(
        P_f=P_f / lam**2,
        P_z=P_z / lam**2,
        P_v=P_v / lam**2,
        level_scale=lam,
        gamma_alloc=np.full(M, 1.0 / M),
    )


def _blockdiag3(a, b, c):
    n1, n2, n3 = a.shape[0], b.shape[0], c.shape[0]
    out = np.zeros((n1 + n2 + n3, n1 + n2 + n3))
    out[:n1, :n1] = a
    out[n1:n1 + n2, n1:n1 + n2] = b
    out[n1 + n2:, n1 + n2:] = c
    return out


@dataclass(frozen=True)
class SteadyStateOracle:
    """Data of the admissible-steady-state projection problem."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    T: np.ndarray
    Z_f: object
    V_f: object
    well_posed: bool

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]


def make_steady_state_oracle(model, Z_f, V_f):
    A, B, C, T = model.A, model.B, model.C, model.T
    n, m, l = model.n, model.m, model.l
    eq = np.block([[A - np.eye(n), B], [C, np.zeros((l, m))]])
    rank = np.linalg.matrix_rank(eq, tol=1e-10)
    well_posed = rank == n + l
    if not well_posed:
        warnings.warn(
            f"steady-state system has row rank {rank} < {n + l}: "
            "not every output is a trackable steady state",
            stacklevel=2,
        )
    return SteadyStateOracle(A=A, B=B, C=C, T=T, Z_f=Z_f, V_f=V_f,
                             well_posed=well_posed)


def admissible_steady_state(y_ref, oracle, terminal_set=None, settings=None):
    """Admissible steady state minimizing the tracking cost ||C z - y_ref||_T^2.

    Minimizes over the steady-state manifold intersected with the
    terminal-stage polytopes; when ``terminal_set`` is given the steady-state
    pair must additionally lie in the terminal level set at zero deviation,
    which is exactly the set of steady states the receding-horizon problem can
    settle on.  Returns ``(z_s, v_s, y_s)``.
    """
    y_ref = np.asarray(y_ref, dtype=float)
    n, m = oracle.n, oracle.m
    A, B, C, T = oracle.A, oracle.B, oracle.C, oracle.T
    Z_f, V_f = oracle.Z_f, oracle.V_f

    nv = n + m
    P = np.zeros((nv, nv))
    P[:n, :n] = 2.0 * C.T @ T @ C
    q = np.zeros(nv)
    q[:n] = -2.0 * C.T @ T @ y_ref

    eq = np.hstack([A - np.eye(n), B])
    rows = [eq]
    lo = [np.zeros(n)]
    hi = [np.zeros(n)]
    Hz = np.hstack([Z_f.H, np.zeros((Z_f.nrows, m))])
    rows.append(Hz)
    lo.append(np.full(Z_f.nrows, -np.inf))
    hi.append(Z_f.h)
    Hv = np.hstack([np.zeros((V_f.nrows, n)), V_f.H])
    rows.append(Hv)
    lo.append(np.full(V_f.nrows, -np.inf))
    hi.append(V_f.h)
    ellipsoids = ()
    if terminal_set is not None:
        rows.append(np.eye(nv))
        lo.append(np.full(nv, -np.inf))
        hi.append(np.full(nv, np.inf))
        shape = _blockdiag3(terminal_set.P_z, terminal_set.P_v,
                            np.zeros((0, 0)))
        start = n + Z_f.nrows + V_f.nrows
        ellipsoids = (EllipsoidBlock(start=start, shape=shape, level=1.0),)

    qp = ConicQp(P=P, q=q, A=np.vstack(rows), lo=np.concatenate(lo),
                 hi=np.concatenate(hi), ellipsoids=ellipsoids)
    st = settings or SolverSettings(eps_abs=1e-9, eps_rel=1e-9, max_iter=200000)
    sol = CentralizedWorkspace(qp, st).solve()
    if sol.status != "optimal":
        raise InfeasibleSteadyStateSet(
            f"steady-state projection did not converge (status {sol.status}, "
            f"primal residual {sol.r_prim:.3e})"
        )
    z_s = sol.x[:n]
    v_s = sol.x[n:]
    return z_s, v_s, C @ z_s
