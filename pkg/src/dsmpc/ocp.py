"""Finite-horizon tracking problem as solver-ready data.

Variables are stacked as ``z(0..N) | v(0..N-1) | z_s | v_s | y_s``.  The cost
penalizes deviation of the plan from the artificial steady state plus the
distance of the artificial output to the requested reference; constraints are
the nominal dynamics, the steady-state conditions, the stage-wise tightened
polytopes and the terminal ellipsoid over ``(z(N)-z_s, z_s, v_s)``.

Only the linear cost term and the initial-condition bounds change between
closed-loop steps, so one factorized workspace serves an entire simulation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatch, TopologyMismatch
from .solver import (
    CentralizedWorkspace,
    ConicQp,
    ConsensusTopology,
    EllipsoidBlock,
    SolverSettings,
    solve_distributed,
)

# Mode-1 infeasibility triggers: exact stage-0 row violation, or a solve that
# hits its iteration budget with this much primal residual left.
MODE1_ROW_TOL = 1e-9
MODE1_RESIDUAL_LIMIT = 1e-4

DEFAULT_OCP_SETTINGS = SolverSettings(eps_abs=1e-8, eps_rel=1e-8, max_iter=20000)


@dataclass(frozen=True)
class OcpSpec:
    """Layout, cost and constraint data of the tracking problem."""

    N: int
    n: int
    m: int
    l: int
    P_hess: np.ndarray
    q: np.ndarray
    A_rows: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    ellipsoid: EllipsoidBlock
    y_ref: np.ndarray
    T: np.ndarray
    stage_state_h: np.ndarray  # (N, p) per-stage state offsets
    stage_input_h: np.ndarray  # (N, q)

    @property
    def nvar(self):
        return (self.N + 1) * self.n + self.N * self.m + self.n + self.m + self.l

    def z_slice(self, t):
        return slice(t * self.n, (t + 1) * self.n)

    def v_slice(self, t):
        base = (self.N + 1) * self.n
        return slice(base + t * self.m, base + (t + 1) * self.m)

    @property
    def zs_slice(self):
        base = (self.N + 1) * self.n + self.N * self.m
        return slice(base, base + self.n)

    @property
    def vs_slice(self):
        base = (self.N + 1) * self.n + self.N * self.m + self.n
        return slice(base, base + self.m)

    @property
    def ys_slice(self):
        base = (self.N + 1) * self.n + self.N * self.m + self.n + self.m
        return slice(base, base + self.l)

    # row layout
    @property
    def init_rows(self):
        return slice(0, self.n)

    @property
    def dyn_rows(self):
        return slice(self.n, self.n + self.N * self.n)

    @property
    def ss_rows(self):
        s = self.n + self.N * self.n
        return slice(s, s + self.n)

    @property
    def out_rows(self):
        s = self.n + self.N * self.n + self.n
        return slice(s, s + self.l)

    def state_rows(self, t):
        p = self.stage_state_h.shape[1]
        s = self.n * (self.N + 2) + self.l + t * p
        return slice(s, s + p)

    def input_rows(self, t):
        p = self.stage_state_h.shape[1]
        qn = self.stage_input_h.shape[1]
        s = self.n * (self.N + 2) + self.l + self.N * p + t * qn
        return slice(s, s + qn)

    def qp(self):
        return ConicQp(P=self.P_hess, q=self.q, A=self.A_rows, lo=self.lo,
                       hi=self.hi, ellipsoids=(self.ellipsoid,))

    def with_reference(self, y_ref):
        y_ref = np.asarray(y_ref, dtype=float)
        if y_ref.shape != (self.l,):
            raise DimensionMismatch(f"reference must have shape ({self.l},)")
        q = self.q.copy()
        q[self.ys_slice] = -2.0 * self.T @ y_ref
        return replace(self, q=q, y_ref=y_ref)

    def objective(self, x):
        """Tracking cost at a stacked variable vector, including the constant."""
        base = float(0.5 * x @ self.P_hess @ x + self.q @ x)
        return base + float(self.y_ref @ self.T @ self.y_ref)


@dataclass(frozen=True)
class OcpSolution:
    Z: np.ndarray
    V: np.ndarray
    z_s: np.ndarray
    v_s: np.ndarray
    y_s: np.ndarray
    objective: float
    status: str
    iterations: int
    residuals: dict
    raw: tuple

    @property
    def optimal(self):
        return self.status == "optimal"


def build_ocp(model, tightened, terminal, P, N, y_ref):
    """Assemble the tracking problem for one reference vector."""
    n, m, l = model.n, model.m, model.l
    if tightened.N != N:
        raise DimensionMismatch(
            f"tightened sets cover horizon {tightened.N}, requested N={N}"
        )
    P = np.asarray(P, dtype=float)
    if P.shape != (n, n):
        raise DimensionMismatch(f"terminal cost must be {n}x{n}, got {P.shape}")
    y_ref = np.asarray(y_ref, dtype=float)
    if y_ref.shape != (l,):
        raise DimensionMismatch(f"reference must have shape ({l},)")

    Hx, Lx = model.state_set.H, model.input_set.H
    p_rows, q_rows = Hx.shape[0], Lx.shape[0]
    nv = (N + 1) * n + N * m + n + m + l

    spec = OcpSpec(
        N=N, n=n, m=m, l=l,
        P_hess=np.zeros((nv, nv)), q=np.zeros(nv),
        A_rows=np.zeros((0, 0)), lo=np.zeros(0), hi=np.zeros(0),
        ellipsoid=None, y_ref=y_ref, T=model.T,
        stage_state_h=np.stack([tightened.state[t].h for t in range(N)]),
        stage_input_h=np.stack([tightened.input[t].h for t in range(N)]),
    )

    # cost: sum of weighted squared deviations, 1/2 x'Px + q'x convention
    H = np.zeros((nv, nv))
    Q2, R2, T2, P2 = 2.0 * model.Q, 2.0 * model.R, 2.0 * model.T, 2.0 * P
    zs, vs, ys = spec.zs_slice, spec.vs_slice, spec.ys_slice
    for t in range(N):
        zt = spec.z_slice(t)
        H[zt, zt] += Q2
        H[zt, zs] -= Q2
        H[zs, zt] -= Q2
        H[zs, zs] += Q2
        vt = spec.v_slice(t)
        H[vt, vt] += R2
        H[vt, vs] -= R2
        H[vs, vt] -= R2
        H[vs, vs] += R2
    zN = spec.z_slice(N)
    H[zN, zN] += P2
    H[zN, zs] -= P2
    H[zs, zN] -= P2
    H[zs, zs] += P2
    H[ys, ys] += T2
    q = np.zeros(nv)
    q[ys] = -2.0 * model.T @ y_ref

    n_eq = n + N * n + n + l
    n_ineq = N * (p_rows + q_rows)
    n_ell = 2 * n + m
    A = np.zeros((n_eq + n_ineq + n_ell, nv))
    lo = np.zeros(A.shape[0])
    hi = np.zeros(A.shape[0])

    A[spec.init_rows, spec.z_slice(0)] = np.eye(n)
    # bounds assigned by the solve wrapper
    for t in range(N):
        rows = slice(n + t * n, n + (t + 1) * n)
        A[rows, spec.z_slice(t + 1)] = np.eye(n)
        A[rows, spec.z_slice(t)] = -model.A
        A[rows, spec.v_slice(t)] = -model.B
    A[spec.ss_rows, zs] = model.A - np.eye(n)
    A[spec.ss_rows, vs] = model.B
    A[spec.out_rows, ys] = np.eye(l)
    A[spec.out_rows, zs] = -model.C

    for t in range(N):
        rows = spec.state_rows(t)
        A[rows, spec.z_slice(t)] = Hx
        lo[rows] = -np.inf
        hi[rows] = tightened.state[t].h
        rows = spec.input_rows(t)
        A[rows, spec.v_slice(t)] = Lx
        lo[rows] = -np.inf
        hi[rows] = tightened.input[t].h

    ell_start = n_eq + n_ineq
    rows = slice(ell_start, ell_start + n)
    A[rows, zN] = np.eye(n)
    A[rows, zs] = -np.eye(n)
    rows = slice(ell_start + n, ell_start + 2 * n)
    A[rows, zs] = np.eye(n)
    rows = slice(ell_start + 2 * n, ell_start + 2 * n + m)
    A[rows, vs] = np.eye(m)
    lo[ell_start:] = -np.inf
    hi[ell_start:] = np.inf
    ellipsoid = EllipsoidBlock(start=ell_start, shape=terminal.augmented_shape(),
                               level=1.0)

    return replace(spec, P_hess=H, q=q, A_rows=A, lo=lo, hi=hi,
                   ellipsoid=ellipsoid)


class OcpWorkspace:
    """Factorized solver workspace bound to one OcpSpec template.

    Re-solves with new initial conditions, references and warm starts without
    refactorizing; this carries an entire closed-loop simulation.
    """

    def __init__(self, spec, settings=None):
        self.spec = spec
        self.settings = settings or DEFAULT_OCP_SETTINGS
        self._ws = CentralizedWorkspace(spec.qp(), self.settings)
        self._y_ref = spec.y_ref.copy()

    def set_reference(self, y_ref):
        self.spec = self.spec.with_reference(y_ref)
        self._y_ref = self.spec.y_ref.copy()

    def reset(self):
        """Drop warm-start state so runs stay order-independent."""
        self._ws.reset_warm()

    def solve(self, z_init, mode=1, warm=None, max_iter=None):
        spec = self.spec
        z_init = np.asarray(z_init, dtype=float)
        if z_init.shape != (spec.n,):
            raise DimensionMismatch(f"initial state must have shape ({spec.n},)")

        if mode == 1:
            viol = _stage0_violation(spec, z_init)
            if viol > MODE1_ROW_TOL:
                return _infeasible_solution(spec, viol)

        lo = spec.lo.copy()
        hi = spec.hi.copy()
        lo[spec.init_rows] = z_init
        hi[spec.init_rows] = z_init
        sol = self._ws.solve(q=spec.q, lo=lo, hi=hi, warm=warm,
                             max_iter=max_iter)
        return _package_solution(spec, sol, z_init, mode)


def _stage0_violation(spec, z_init):
    rows = spec.state_rows(0)
    H = spec.A_rows[rows, spec.z_slice(0)]
    return float(np.max(H @ z_init - spec.hi[rows], initial=-np.inf))


def _infeasible_solution(spec, violation):
    shape = (spec.N + 1, spec.n)
    return OcpSolution(
        Z=np.full(shape, np.nan), V=np.full((spec.N, spec.m), np.nan),
        z_s=np.full(spec.n, np.nan), v_s=np.full(spec.m, np.nan),
        y_s=np.full(spec.l, np.nan), objective=np.inf, status="infeasible",
        iterations=0,
        residuals={"stage0_violation": violation},
        raw=(None, None, None),
    )


def _package_solution(spec, sol, z_init, mode):
    x = sol.x
    Z = np.stack([x[spec.z_slice(t)] for t in range(spec.N + 1)])
    V = np.stack([x[spec.v_slice(t)] for t in range(spec.N)]) if spec.N else \
        np.zeros((0, spec.m))
    z_s = x[spec.zs_slice]
    v_s = x[spec.vs_slice]
    y_s = x[spec.ys_slice]
    residuals = solution_residuals(spec, x, z_init)
    status = sol.status
    if status == "optimal" and (
        residuals["equality"] > 1e-6
        or residuals["slack_min"] < -1e-6
        or residuals["terminal_quad"] > 1.0 + 1e-6
    ):
        status = "max_iter"
    if status == "max_iter" and sol.r_prim > MODE1_RESIDUAL_LIMIT and mode == 1:
        status = "infeasible"
    return OcpSolution(
        Z=Z, V=V, z_s=z_s, v_s=v_s, y_s=y_s,
        objective=spec.objective(x), status=status, iterations=sol.iterations,
        residuals=residuals, raw=(sol.x, sol.y, sol.z),
    )


def solution_residuals(spec, x, z_init=None):
    """Certified feasibility numbers recomputed from the variables."""
    A, lo, hi = spec.A_rows, spec.lo, spec.hi
    ax = A @ x
    eq = float(np.max(np.abs(ax[spec.dyn_rows])))
    eq = max(eq, float(np.max(np.abs(ax[spec.ss_rows]))))
    eq = max(eq, float(np.max(np.abs(ax[spec.out_rows]))))
    if z_init is not None:
        eq = max(eq, float(np.max(np.abs(x[spec.z_slice(0)] - z_init))))
    slack = np.inf
    for t in range(spec.N):
        rows = spec.state_rows(t)
        slack = min(slack, float(np.min(spec.stage_state_h[t] - ax[rows])))
        rows = spec.input_rows(t)
        slack = min(slack, float(np.min(spec.stage_input_h[t] - ax[rows])))
    ell = spec.ellipsoid
    seg = ax[ell.start:ell.start + ell.dim]
    term = float(seg @ ell.shape @ seg)
    return {"equality": eq, "slack_min": slack, "terminal_quad": term}


def solve_ocp(spec, z_init, mode=1, settings=None, warm=None):
    """One-shot solve; builds a throwaway workspace."""
    return OcpWorkspace(spec, settings).solve(z_init, mode=mode, warm=warm)


def shift_solution(sol, K, model):
    """One-step-shifted plan with the tube gain appended at the horizon end.

    The shifted plan is feasible by construction whenever ``sol`` is, which is
    what makes the fallback initialization work; it doubles as the solver warm
    start for the next step.
    """
    Z, V = sol.Z, sol.V
    N = V.shape[0]
    v_end = sol.v_s + K @ (Z[N] - sol.z_s)
    V_new = np.vstack([V[1:], v_end[None, :]]) if N > 1 else v_end[None, :]
    Z_new = np.vstack([Z[1:], (model.A @ Z[N] + model.B @ v_end)[None, :]])
    return ShiftedPlan(Z=Z_new, V=V_new, z_s=sol.z_s.copy(),
                       v_s=sol.v_s.copy(), y_s=sol.y_s.copy())


@dataclass(frozen=True)
class ShiftedPlan:
    Z: np.ndarray
    V: np.ndarray
    z_s: np.ndarray
    v_s: np.ndarray
    y_s: np.ndarray

    def as_vector(self, spec):
        x = np.zeros(spec.nvar)
        for t in range(spec.N + 1):
            x[spec.z_slice(t)] = self.Z[t]
        for t in range(spec.N):
            x[spec.v_slice(t)] = self.V[t]
        x[spec.zs_slice] = self.z_s
        x[spec.vs_slice] = self.v_s
        x[spec.ys_slice] = self.y_s
        return x


def dump_ocp(spec, path):
    """Write the assembled problem as a plain-text matrix document.

    Intended for cross-checking one instance against an external solver:
    sections (cost Hessian and linear term in the 1/2 x'Px + q'x convention,
    constraint operator, row bounds, terminal-quadratic shape) are headed by
    ``# section NAME rows=R cols=C`` lines and hold one row per line with
    17-significant-digit entries.
    """
    def write_mat(fh, name, mat, extra=""):
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        fh.write(f"# section {name} rows={mat.shape[0]} cols={mat.shape[1]}{extra}\n")
        for row in mat:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")

    ell = spec.ellipsoid
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# tracking problem: N={spec.N} n={spec.n} m={spec.m} "
                 f"l={spec.l} nvar={spec.nvar}\n")
        fh.write("# variable order: z(0..N), v(0..N-1), z_s, v_s, y_s\n")
        write_mat(fh, "HESSIAN", spec.P_hess)
        write_mat(fh, "LINEAR", spec.q[None, :])
        write_mat(fh, "OPERATOR", spec.A_rows)
        write_mat(fh, "LOWER", spec.lo[None, :])
        write_mat(fh, "UPPER", spec.hi[None, :])
        write_mat(fh, "ELLIPSOID_SHAPE", ell.shape,
                  extra=f" start={ell.start} level={ell.level:.17g}")


def load_ocp_dump(path):
    """Parse a :func:`dump_ocp` document back into a dict of arrays."""
    sections = {}
    meta = {}
    current = None
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("# section"):
                if current is not None:
                    sections[current] = np.array(rows)
                parts = line.split()
                current = parts[2]
                rows = []
                for tok in parts[3:]:
                    key, val = tok.split("=")
                    meta[f"{current}.{key}"] = float(val)
            elif line.startswith("#"):
                continue
            else:
                rows.append([float(tok) for tok in line.split()])
        if current is not None:
            sections[current] = np.array(rows)
    sections["meta"] = meta
    return sections


# -- distributed decomposition ---------------------------------------------


def build_distributed_ocp(spec, model, terminal, z_init):
    """Split the tracking problem into per-agent problems plus a topology.

    Agent i keeps its own trajectory, steady-state and output variables plus
    copies of the neighbor state trajectories and neighbor steady states that
    its dynamics, constraints and cost touch.  The terminal ellipsoid is
    enforced as per-subsystem quadratics with the level split equally, which
    is conservative; everything else is an exact split.  Requires the terminal
    cost matrix to vanish between non-neighbors.
    """
    M = model.M
    N = spec.N
    P_cost = 0.5 * spec.P_hess[spec.z_slice(N), spec.z_slice(N)]  # = terminal P
    for a in range(M):
        for b in range(M):
            if b in model.neighborhoods[a]:
                continue
            blk = P_cost[model.state_slice(a), model.state_slice(b)]
            if np.max(np.abs(blk)) > 1e-9:
                raise TopologyMismatch(
                    f"terminal cost couples non-neighbors {a} and {b} "
                    f"(magnitude {np.max(np.abs(blk)):.2e}); the distributed "
                    "split is not exact for this model"
                )

    local_qps = []
    maps = []
    owner = np.empty(spec.nvar, dtype=int)
    for t in range(N + 1):
        base = spec.z_slice(t).start
        for j in range(M):
            sl = model.state_slice(j)
            owner[base + sl.start:base + sl.stop] = j
    for t in range(N):
        base = spec.v_slice(t).start
        for j in range(M):
            sl = model.input_slice(j)
            owner[base + sl.start:base + sl.stop] = j
    for j in range(M):
        sl = model.state_slice(j)
        owner[spec.zs_slice.start + sl.start:spec.zs_slice.start + sl.stop] = j
        su = model.input_slice(j)
        owner[spec.vs_slice.start + su.start:spec.vs_slice.start + su.stop] = j
        sy = model.output_slice(j)
        owner[spec.ys_slice.start + sy.start:spec.ys_slice.start + sy.stop] = j

    edges = []
    for i in range(M):
        for j in model.neighborhoods[i]:
            if j > i:
                edges.append((i, j))

    for i in range(M):
        nb = model.neighborhoods[i]
        glob = []
        # neighbor state trajectories, t-major
        for t in range(N + 1):
            base = spec.z_slice(t).start
            for j in nb:
                sl = model.state_slice(j)
                glob.extend(range(base + sl.start, base + sl.stop))
        own_inputs_start = len(glob)
        for t in range(N):
            base = spec.v_slice(t).start
            sl = model.input_slice(i)
            glob.extend(range(base + sl.start, base + sl.stop))
        zs_local_start = len(glob)
        for j in nb:
            sl = model.state_slice(j)
            glob.extend(range(spec.zs_slice.start + sl.start,
                              spec.zs_slice.start + sl.stop))
        vs_local_start = len(glob)
        sl = model.input_slice(i)
        glob.extend(range(spec.vs_slice.start + sl.start,
                          spec.vs_slice.start + sl.stop))
        ys_local_start = len(glob)
        sl = model.output_slice(i)
        glob.extend(range(spec.ys_slice.start + sl.start,
                          spec.ys_slice.start + sl.stop))
        glob = np.asarray(glob, dtype=int)
        maps.append(glob)

        local_qps.append(_agent_qp(
            spec, model, terminal, z_init, i, glob,
            own_inputs_start, zs_local_start, vs_local_start, ys_local_start,
        ))

    topology = ConsensusTopology(
        n_global=spec.nvar, local_to_global=tuple(maps), owner=owner,
        edges=tuple(edges),
    )
    return local_qps, topology


def _agent_qp(spec, model, terminal, z_init, i, glob, v0, zs0, vs0, ys0):
    """Local cost and constraints of agent i over its local variable vector."""
    nb = model.neighborhoods[i]
    nloc = len(glob)
    n_i = model.state_slice(i).stop - model.state_slice(i).start
    m_i = model.input_slice(i).stop - model.input_slice(i).start
    l_i = model.output_slice(i).stop - model.output_slice(i).start
    nb_sizes = [model.state_slice(j).stop - model.state_slice(j).start for j in nb]
    n_nb = sum(nb_sizes)

    def z_loc(t):
        return slice(t * n_nb, (t + 1) * n_nb)

    def zi_loc(t):
        off = t * n_nb
        for j, sz in zip(nb, nb_sizes):
            if j == i:
                return slice(off, off + sz)
            off += sz
        raise AssertionError

    def v_loc(t):
        return slice(v0 + t * m_i, v0 + (t + 1) * m_i)

    zs_nb = slice(zs0, zs0 + n_nb)
    zs_i = None
    off = zs0
    for j, sz in zip(nb, nb_sizes):
        if j == i:
            zs_i = slice(off, off + sz)
        off += sz
    vs_i = slice(vs0, vs0 + m_i)
    ys_i = slice(ys0, ys0 + l_i)

    sl_i = model.state_slice(i)
    su_i = model.input_slice(i)
    sy_i = model.output_slice(i)
    Qi = model.Q[sl_i, sl_i]
    Ri = model.R[su_i, su_i]
    Ti = model.T[sy_i, sy_i]
    N = spec.N

    H = np.zeros((nloc, nloc))
    q = np.zeros(nloc)
    Q2, R2, T2 = 2.0 * Qi, 2.0 * Ri, 2.0 * Ti
    for t in range(N):
        zt = zi_loc(t)
        H[zt, zt] += Q2
        H[zt, zs_i] -= Q2
        H[zs_i, zt] -= Q2
        H[zs_i, zs_i] += Q2
        vt = v_loc(t)
        H[vt, vt] += R2
        H[vt, vs_i] -= R2
        H[vs_i, vt] -= R2
        H[vs_i, vs_i] += R2
    # Terminal cost: entry (a,b) of P is shared by every agent whose
    # neighborhood holds both blocks, so the local pieces sum to P exactly;
    # each local piece must itself be PSD for the subproblem to stay convex
    # (always true for complete graphs, where the piece is P / M).
    P_full = 0.5 * spec.P_hess[spec.z_slice(N), spec.z_slice(N)]
    W_i = np.zeros((n_nb, n_nb))
    for a_pos, a in enumerate(nb):
        for b_pos, b in enumerate(nb):
            blk = P_full[model.state_slice(a), model.state_slice(b)]
            holders = sum(
                1 for k in range(model.M)
                if a in model.neighborhoods[k] and b in model.neighborhoods[k]
            )
            za = _nb_slice_at(nb_sizes, a_pos, 0)
            zb = _nb_slice_at(nb_sizes, b_pos, 0)
            W_i[za, zb] = blk / holders
    w_min = float(np.linalg.eigvalsh(0.5 * (W_i + W_i.T)).min())
    if w_min < -1e-9:
        raise TopologyMismatch(
            f"agent {i}: local share of the terminal cost is indefinite "
            f"(eigenvalue {w_min:.3e}); the coupling graph does not admit an "
            "exact convex split of this terminal cost matrix"
        )
    zN_nb = z_loc(N)
    W2 = 2.0 * W_i
    H[zN_nb, zN_nb] += W2
    H[zN_nb, zs_nb] -= W2
    H[zs_nb, zN_nb] -= W2
    H[zs_nb, zs_nb] += W2
    H[ys_i, ys_i] += T2
    q[ys_i] = -2.0 * Ti @ spec.y_ref[sy_i]

    # constraints
    rows, lo, hi = [], [], []

    def add(block, lo_v, hi_v):
        rows.append(block)
        lo.append(np.atleast_1d(lo_v))
        hi.append(np.atleast_1d(hi_v))

    blk = np.zeros((n_i, nloc))
    blk[:, zi_loc(0)] = np.eye(n_i)
    add(blk, z_init[sl_i], z_init[sl_i])

    A_row = model.A[sl_i, :] @ _nb_selector(model, nb)
    B_i = model.B[sl_i, su_i]
    for t in range(N):
        blk = np.zeros((n_i, nloc))
        blk[:, zi_loc(t + 1)] = np.eye(n_i)
        blk[:, z_loc(t)] -= A_row
        blk[:, v_loc(t)] = -B_i
        add(blk, np.zeros(n_i), np.zeros(n_i))

    blk = np.zeros((n_i, nloc))
    blk[:, zs_nb] = A_row
    blk[:, zs_i] -= np.eye(n_i)
    blk[:, vs_i] = B_i
    add(blk, np.zeros(n_i), np.zeros(n_i))

    C_row = model.C[sy_i, :] @ _nb_selector(model, nb)
    blk = np.zeros((l_i, nloc))
    blk[:, ys_i] = np.eye(l_i)
    blk[:, zs_nb] = -C_row
    add(blk, np.zeros(l_i), np.zeros(l_i))

    own_state_rows = np.flatnonzero(model.state_row_owner == i)
    Hx = model.state_set.H[own_state_rows, :] @ _nb_selector(model, nb)
    own_input_rows = np.flatnonzero(model.input_row_owner == i)
    Lx = model.input_set.H[own_input_rows][:, su_i]
    for t in range(N):
        blk = np.zeros((len(own_state_rows), nloc))
        blk[:, z_loc(t)] = Hx
        add(blk, np.full(len(own_state_rows), -np.inf),
            spec.stage_state_h[t][own_state_rows])
        blk = np.zeros((len(own_input_rows), nloc))
        blk[:, v_loc(t)] = Lx
        add(blk, np.full(len(own_input_rows), -np.inf),
            spec.stage_input_h[t][own_input_rows])

    # terminal quadratic: own blocks, level split 1/M
    Pf_ii = terminal.P_f[sl_i, sl_i]
    Pz_i = terminal.P_z[sl_i, sl_i]
    Pv_i = terminal.P_v[su_i, su_i]
    dim = 2 * n_i + m_i
    blk = np.zeros((dim, nloc))
    blk[:n_i, zi_loc(N)] = np.eye(n_i)
    blk[:n_i, zs_i] = -np.eye(n_i)
    blk[n_i:2 * n_i, zs_i] = np.eye(n_i)
    blk[2 * n_i:, vs_i] = np.eye(m_i)
    ell_start = sum(r.shape[0] for r in rows)
    add(blk, np.full(dim, -np.inf), np.full(dim, np.inf))
    shape = np.zeros((dim, dim))
    shape[:n_i, :n_i] = Pf_ii
    shape[n_i:2 * n_i, n_i:2 * n_i] = Pz_i
    shape[2 * n_i:, 2 * n_i:] = Pv_i
    ell = EllipsoidBlock(start=ell_start, shape=shape,
                         level=float(terminal.gamma_alloc[i]))

    return ConicQp(P=H, q=q, A=np.vstack(rows), lo=np.concatenate(lo),
                   hi=np.concatenate(hi), ellipsoids=(ell,))


def _nb_selector(model, nb):
    """Columns of the global state belonging to the neighborhood, stacked."""
    cols = np.concatenate([
        np.arange(model.state_slice(j).start, model.state_slice(j).stop)
        for j in nb
    ])
    sel = np.zeros((model.n, len(cols)))
    sel[cols, np.arange(len(cols))] = 1.0
    return sel


def _nb_slice_at(nb_sizes, pos, base):
    off = base + sum(nb_sizes[:pos])
    return slice(off, off + nb_sizes[pos])


def solve_ocp_distributed(spec, model, terminal, z_init, settings=None):
    """Solve the tracking problem with the consensus backend.

    Returns an :class:`OcpSolution` built from the consensus vector; the
    terminal constraint is the conservative per-subsystem split.
    """
    z_init = np.asarray(z_init, dtype=float)
    local_qps, topology = build_distributed_ocp(spec, model, terminal, z_init)
    st = settings or SolverSettings(eps_abs=1e-7, eps_rel=1e-7, max_iter=5000)
    zeta, status, info = solve_distributed(local_qps, topology, st)
    x = zeta
    Z = np.stack([x[spec.z_slice(t)] for t in range(spec.N + 1)])
    V = np.stack([x[spec.v_slice(t)] for t in range(spec.N)])
    residuals = solution_residuals(spec, x, z_init)
    return OcpSolution(
        Z=Z, V=V, z_s=x[spec.zs_slice], v_s=x[spec.vs_slice],
        y_s=x[spec.ys_slice], objective=spec.objective(x), status=status,
        iterations=info["iterations"], residuals=residuals,
        raw=(x, None, None),
    )
