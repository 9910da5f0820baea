"""Coupled linear network model: per-subsystem data, validation, global assembly.

The network is a set of M discrete-time LTI subsystems coupled through their
dynamics and outputs.  Each subsystem carries its own constraint polytopes,
probability levels, cost weights and a tube-gain block acting on the stacked
state of its neighborhood.  A :class:`NetworkModel` holds both the local data
and the assembled global matrices; everything is immutable after construction
and safe to share between threads.

Model files are JSON documents; see ``load_network`` for the schema.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import (
    DimensionMismatch,
    GraphNotBidirectional,
    InvalidProbability,
    ModelFileError,
    NoiseNotPD,
    NonSquare,
    RiccatiDivergence,
    UnboundedConstraintSet,
    UnstableClosedLoop,
)

# Stability margin for the strict rho(A+BK) < 1 check.
RHO_MARGIN = 1e-9
# A coordinate whose LP support exceeds this is reported as unbounded.
UNBOUNDED_LIMIT = 1e9


def _arr(x, dtype=float):
    a = np.array(x, dtype=dtype)
    a.setflags(write=False)
    return a


def spectral_radius(mat):
    """Spectral radius of a square matrix via full eigendecomposition."""
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise NonSquare(f"expected a square matrix, got shape {mat.shape}")
    if mat.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(mat))))


def lqr_gain(A, B, Q, R, tol=1e-12, max_iter=10000):
    """Infinite-horizon discrete LQR gain via Riccati fixed-point iteration.

    Iterates ``P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA`` from ``P = Q`` until
    the successive-iterate max-norm drops below ``tol`` and returns
    ``K = -(R + B'PB)^-1 B'PA``.

    The returned gain is dense.  As a tube gain it respects the neighborhood
    structure only when every neighborhood spans the whole network.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise NonSquare(f"A must be square, got {A.shape}")
    n, m = B.shape
    if A.shape[0] != n or Q.shape != (n, n) or R.shape != (m, m):
        raise DimensionMismatch(
            f"inconsistent LQR data: A {A.shape}, B {B.shape}, Q {Q.shape}, R {R.shape}"
        )
    P = Q.copy()
    for _ in range(max_iter):
        G = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        Pn = Q + A.T @ P @ (A - B @ G)
        Pn = 0.5 * (Pn + Pn.T)
        if np.max(np.abs(Pn - P)) < tol:
            P = Pn
            break
        P = Pn
    else:
        raise RiccatiDivergence(
            f"Riccati iteration did not converge within {max_iter} iterations"
        )
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    if spectral_radius(A + B @ K) >= 1.0 - RHO_MARGIN:
        raise UnstableClosedLoop(
            "Riccati iteration converged but A+BK is not Schur stable; "
            "(A,B) is likely not stabilizable"
        )
    return K


@dataclass(frozen=True)
class Polytope:
    """Inequality description ``{x : H x <= h}``."""

    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = _arr(self.H)
        h = _arr(self.h)
        if H.ndim != 2 or h.ndim != 1 or H.shape[0] != h.shape[0]:
            raise DimensionMismatch(
                f"polytope shapes inconsistent: H {H.shape}, h {h.shape}"
            )
        if H.shape[0] > 0 and np.any(np.all(H == 0.0, axis=1)):
            raise DimensionMismatch("polytope has an all-zero row")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)

    @property
    def nrows(self):
        return self.H.shape[0]

    @property
    def dim(self):
        return self.H.shape[1]

    def contains(self, x, tol=0.0):
        return bool(np.all(self.H @ np.asarray(x, dtype=float) <= self.h + tol))


@dataclass(frozen=True)
class SubsystemSpec:
    """Local data of one subsystem.

    ``A_blocks`` and ``C_blocks`` map neighbor index ``j`` to the coupling
    blocks A_ij (n_i x n_j) and C_ij (l_i x n_j).  The state polytope rows
    span the stacked neighborhood state (neighbors in ascending index order);
    the tube-gain block has the same column convention.
    """

    index: int
    n: int
    m: int
    l: int
    neighbors: tuple
    A_blocks: dict
    B: np.ndarray
    C_blocks: dict
    noise_cov: np.ndarray
    state_poly: Polytope
    input_poly: Polytope
    p_x: float
    p_u: float
    Q: np.ndarray
    R: np.ndarray
    T: np.ndarray
    K_block: np.ndarray | None = None


@dataclass(frozen=True)
class NetworkModel:
    """Assembled network: subsystem list plus global matrices and sets.

    Attributes
    ----------
    subsystems : list of SubsystemSpec
    neighborhoods : tuple of tuples, ascending neighbor indices (self included)
    selectors : tuple of ndarray, S_i with x_{N_i} = S_i @ x
    A, B, C, noise_cov, K, Q, R, T : global matrices
    state_set, input_set : global polytopes (stacked local rows)
    state_row_owner, input_row_owner : owning subsystem of each global row
    """

    subsystems: list
    neighborhoods: tuple
    selectors: tuple
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    noise_cov: np.ndarray
    K: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    T: np.ndarray
    state_set: Polytope
    input_set: Polytope
    state_row_owner: np.ndarray
    input_row_owner: np.ndarray
    state_offsets: np.ndarray = field(repr=False, default=None)
    input_offsets: np.ndarray = field(repr=False, default=None)
    output_offsets: np.ndarray = field(repr=False, default=None)
    gain_from_config: bool = True

    @property
    def M(self):
        return len(self.subsystems)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def l(self):
        return self.C.shape[0]

    @property
    def A_K(self):
        return self.A + self.B @ self.K

    def state_slice(self, i):
        return slice(int(self.state_offsets[i]), int(self.state_offsets[i + 1]))

    def input_slice(self, i):
        return slice(int(self.input_offsets[i]), int(self.input_offsets[i + 1]))

    def output_slice(self, i):
        return slice(int(self.output_offsets[i]), int(self.output_offsets[i + 1]))

    def local_AK_row(self, i):
        """A_{N_i,K} = A_{N_i} + B_i K_{N_i}: row block i over neighborhood columns."""
        AK = self.A_K
        cols = np.concatenate(
            [np.arange(self.state_slice(j).start, self.state_slice(j).stop)
             for j in self.neighborhoods[i]]
        )
        return AK[self.state_slice(i), :][:, cols]

    def p_x_levels(self):
        return np.array([s.p_x for s in self.subsystems])

    def p_u_levels(self):
        return np.array([s.p_u for s in self.subsystems])


def _check_symmetric_psd(mat, name, tol=1e-9):
    if not np.allclose(mat, mat.T, atol=1e-10, rtol=0.0):
        raise NoiseNotPD(f"{name} is not symmetric")
    w = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    if w.min() < -tol:
        raise NoiseNotPD(f"{name} has negative eigenvalue {w.min():.3e}")
    return float(w.min())


def assemble_global(subsystems, neighborhoods):
    """Place coupling blocks into global matrices and stack the local polytopes.

    Returns ``(A, B, C, noise_cov, state_set, input_set, selectors,
    state_row_owner, input_row_owner, offsets)``.
    """
    M = len(subsystems)
    ns = [s.n for s in subsystems]
    ms = [s.m for s in subsystems]
    ls = [s.l for s in subsystems]
    xoff = np.concatenate([[0], np.cumsum(ns)])
    uoff = np.concatenate([[0], np.cumsum(ms)])
    yoff = np.concatenate([[0], np.cumsum(ls)])
    n, m, l = int(xoff[-1]), int(uoff[-1]), int(yoff[-1])

    A = np.zeros((n, n))
    B = np.zeros((n, m))
    C = np.zeros((l, n))
    W = np.zeros((n, n))
    for i, sub in enumerate(subsystems):
        for j, blk in sub.A_blocks.items():
            if j not in neighborhoods[i]:
                raise DimensionMismatch(
                    f"subsystem {i} has an A block for non-neighbor {j}"
                )
            if blk.shape != (ns[i], ns[j]):
                raise DimensionMismatch(
                    f"A block ({i},{j}) has shape {blk.shape}, expected {(ns[i], ns[j])}"
                )
            A[xoff[i]:xoff[i + 1], xoff[j]:xoff[j + 1]] = blk
        for j, blk in sub.C_blocks.items():
            if j not in neighborhoods[i]:
                raise DimensionMismatch(
                    f"subsystem {i} has a C block for non-neighbor {j}"
                )
            if blk.shape != (ls[i], ns[j]):
                raise DimensionMismatch(
                    f"C block ({i},{j}) has shape {blk.shape}, expected {(ls[i], ns[j])}"
                )
            C[yoff[i]:yoff[i + 1], xoff[j]:xoff[j + 1]] = blk
        if sub.B.shape != (ns[i], ms[i]):
            raise DimensionMismatch(
                f"B_{i} has shape {sub.B.shape}, expected {(ns[i], ms[i])}"
            )
        B[xoff[i]:xoff[i + 1], uoff[i]:uoff[i + 1]] = sub.B
        W[xoff[i]:xoff[i + 1], xoff[i]:xoff[i + 1]] = sub.noise_cov

    selectors = []
    for i in range(M):
        nn = sum(ns[j] for j in neighborhoods[i])
        S = np.zeros((nn, n))
        r = 0
        for j in neighborhoods[i]:
            S[r:r + ns[j], xoff[j]:xoff[j + 1]] = np.eye(ns[j])
            r += ns[j]
        S.setflags(write=False)
        selectors.append(S)

    H_rows, h_vals, x_owner = [], [], []
    for i, sub in enumerate(subsystems):
        S = selectors[i]
        if sub.state_poly.dim != S.shape[0]:
            raise DimensionMismatch(
                f"subsystem {i}: state polytope spans {sub.state_poly.dim} columns, "
                f"neighborhood state has dimension {S.shape[0]}"
            )
        H_rows.append(sub.state_poly.H @ S)
        h_vals.append(sub.state_poly.h)
        x_owner.extend([i] * sub.state_poly.nrows)
    L_rows, l_vals, u_owner = [], [], []
    for i, sub in enumerate(subsystems):
        if sub.input_poly.dim != ms[i]:
            raise DimensionMismatch(
                f"subsystem {i}: input polytope spans {sub.input_poly.dim} columns, "
                f"input has dimension {ms[i]}"
            )
        Lg = np.zeros((sub.input_poly.nrows, m))
        Lg[:, uoff[i]:uoff[i + 1]] = sub.input_poly.H
        L_rows.append(Lg)
        l_vals.append(sub.input_poly.h)
        u_owner.extend([i] * sub.input_poly.nrows)

    state_set = Polytope(np.vstack(H_rows), np.concatenate(h_vals))
    input_set = Polytope(np.vstack(L_rows), np.concatenate(l_vals))
    return (
        A, B, C, W, state_set, input_set, tuple(selectors),
        _arr(x_owner, dtype=int), _arr(u_owner, dtype=int),
        (_arr(xoff, dtype=int), _arr(uoff, dtype=int), _arr(yoff, dtype=int)),
    )


def _check_bounded(poly, what):
    """Every coordinate must have finite support in both directions."""
    d = poly.dim
    for j in range(d):
        for sign in (1.0, -1.0):
            c = np.zeros(d)
            c[j] = -sign  # linprog minimizes
            res = linprog(c, A_ub=poly.H, b_ub=poly.h,
                          bounds=[(None, None)] * d, method="highs")
            if res.status == 3 or (res.status == 0 and abs(res.fun) > UNBOUNDED_LIMIT):
                raise UnboundedConstraintSet(
                    f"{what} coordinate {j} is unbounded "
                    f"{'above' if sign > 0 else 'below'}; add a large finite bound"
                )
            if res.status not in (0, 3):
                raise UnboundedConstraintSet(
                    f"{what} boundedness LP failed with status {res.status}"
                )


def build_network(subsystems, neighborhoods, gain_from_config=True, check_bounded=True):
    """Validate the structural assumptions and return a NetworkModel.

    ``subsystems`` must already carry their tube-gain blocks.
    """
    M = len(subsystems)
    for i, nb in enumerate(neighborhoods):
        if i not in nb:
            raise GraphNotBidirectional(f"subsystem {i} missing from its own neighborhood")
        for j in nb:
            if j < 0 or j >= M:
                raise ModelFileError(f"neighbor index {j} out of range for M={M}")
            if i not in neighborhoods[j]:
                raise GraphNotBidirectional(
                    f"{j} in N_{i} but {i} not in N_{j}: graph must be bidirectional"
                )

    for i, sub in enumerate(subsystems):
        _check_symmetric_psd(sub.noise_cov, f"noise covariance of subsystem {i}",
                             tol=1e-12)
        if not (0.0 < sub.p_x < 1.0) or not (0.0 < sub.p_u < 1.0):
            raise InvalidProbability(
                f"subsystem {i}: probability levels must lie strictly in (0,1)"
            )

    (A, B, C, W, state_set, input_set, selectors,
     x_owner, u_owner, offsets) = assemble_global(subsystems, neighborhoods)
    xoff, uoff, yoff = offsets
    n, m = A.shape[0], B.shape[1]

    K = np.zeros((m, n))
    for i, sub in enumerate(subsystems):
        if sub.K_block is None:
            raise ModelFileError(f"subsystem {i} has no tube-gain block")
        nn = selectors[i].shape[0]
        if sub.K_block.shape != (sub.m, nn):
            raise DimensionMismatch(
                f"K block of subsystem {i} has shape {sub.K_block.shape}, "
                f"expected {(sub.m, nn)}"
            )
        K[uoff[i]:uoff[i + 1], :] = sub.K_block @ selectors[i]

    rho = spectral_radius(A + B @ K)
    if rho >= 1.0 - RHO_MARGIN:
        raise UnstableClosedLoop(f"rho(A+BK) = {rho:.6f} is not strictly below 1")

    Qg = np.zeros((n, n))
    Rg = np.zeros((m, m))
    Tg = np.zeros((C.shape[0], C.shape[0]))
    for i, sub in enumerate(subsystems):
        Qg[xoff[i]:xoff[i + 1], xoff[i]:xoff[i + 1]] = sub.Q
        Rg[uoff[i]:uoff[i + 1], uoff[i]:uoff[i + 1]] = sub.R
        Tg[yoff[i]:yoff[i + 1], yoff[i]:yoff[i + 1]] = sub.T

    if check_bounded:
        _check_bounded(state_set, "state set")
        _check_bounded(input_set, "input set")

    for name, mat in (("A", A), ("B", B), ("C", C), ("K", K), ("Q", Qg),
                      ("R", Rg), ("T", Tg), ("noise_cov", W)):
        mat.setflags(write=False)

    return NetworkModel(
        subsystems=list(subsystems),
        neighborhoods=tuple(tuple(nb) for nb in neighborhoods),
        selectors=selectors,
        A=A, B=B, C=C, noise_cov=W, K=K, Q=Qg, R=Rg, T=Tg,
        state_set=state_set, input_set=input_set,
        state_row_owner=x_owner, input_row_owner=u_owner,
        state_offsets=xoff, input_offsets=uoff, output_offsets=yoff,
        gain_from_config=gain_from_config,
    )


def _parse_matrix(obj, name):
    try:
        mat = np.array(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelFileError(f"{name}: cannot parse as a numeric matrix") from exc
    if mat.ndim == 1:
        mat = mat.reshape(1, -1) if mat.size else mat.reshape(0, 0)
    if mat.ndim != 2:
        raise ModelFileError(f"{name}: expected a nested (row-major) array")
    return mat


def network_from_dict(doc):
    """Build a NetworkModel from a parsed model document."""
    try:
        subs_doc = doc["subsystem"]
        graph = doc["graph"]["neighbors"]
        weights = doc["weights"]
        prob = doc["probability"]
    except (KeyError, TypeError) as exc:
        raise ModelFileError(f"missing model-file section: {exc}") from exc

    M = len(subs_doc)
    if M == 0:
        raise ModelFileError("model declares no subsystems")
    neighborhoods = []
    if len(graph) != M:
        raise ModelFileError("graph.neighbors must list every subsystem")
    for i in range(M):
        key = str(i)
        if key not in graph:
            raise ModelFileError(f"graph.neighbors missing entry for subsystem {i}")
        nb = sorted(set(int(j) for j in graph[key]) | {i})
        neighborhoods.append(tuple(nb))
    for i, nb in enumerate(neighborhoods):
        for j in nb:
            if j < 0 or j >= M:
                raise ModelFileError(f"neighbor index {j} out of range for M={M}")
            if i not in neighborhoods[j]:
                raise GraphNotBidirectional(
                    f"{j} in N_{i} but {i} not in N_{j}: graph must be bidirectional"
                )

    p_x_default = prob.get("p_x")
    p_u_default = prob.get("p_u")
    distribution = prob.get("distribution", "gaussian")
    if distribution not in ("gaussian", "uniform"):
        raise ModelFileError(f"unknown distribution tag {distribution!r}")

    def weight(name, i, dim):
        seq = weights.get(name)
        if seq is None or len(seq) != M:
            raise ModelFileError(f"weights.{name} must list one matrix per subsystem")
        mat = _parse_matrix(seq[i], f"weights.{name}[{i}]")
        if mat.shape != (dim, dim):
            raise DimensionMismatch(
                f"weights.{name}[{i}] has shape {mat.shape}, expected {(dim, dim)}"
            )
        return mat

    gain = doc.get("gain")
    dims = []
    for i, sd in enumerate(subs_doc):
        if "B" not in sd:
            raise ModelFileError(f"subsystem[{i}] missing field B")
        B = _parse_matrix(sd["B"], f"subsystem[{i}].B")
        dims.append(B.shape)

    subsystems = []
    for i, sd in enumerate(subs_doc):
        missing = [key for key in ("B", "noise_cov", "state_constraints",
                                   "input_constraints") if key not in sd]
        if missing:
            raise ModelFileError(f"subsystem[{i}] missing fields: {missing}")
        nb = neighborhoods[i]
        n_i, m_i = dims[i]
        A_blocks = {}
        for jkey, blk in sd.get("A", {}).items():
            j = int(jkey)
            A_blocks[j] = _parse_matrix(blk, f"subsystem[{i}].A[{jkey}]")
        C_blocks = {}
        for jkey, blk in sd.get("C", {}).items():
            j = int(jkey)
            C_blocks[j] = _parse_matrix(blk, f"subsystem[{i}].C[{jkey}]")
        l_i = next(iter(C_blocks.values())).shape[0] if C_blocks else 0
        W = _parse_matrix(sd["noise_cov"], f"subsystem[{i}].noise_cov")
        if W.shape != (n_i, n_i):
            raise DimensionMismatch(
                f"subsystem[{i}].noise_cov has shape {W.shape}, expected {(n_i, n_i)}"
            )

        sc = sd["state_constraints"]
        H = _parse_matrix(sc["H"], f"subsystem[{i}].state_constraints.H")
        h = np.array(sc["h"], dtype=float).ravel()
        over = sc.get("over", "own")
        if over == "own":
            # lift to the stacked neighborhood state
            n_nb = sum(dims[j][0] for j in nb)
            lift = np.zeros((H.shape[0], n_nb))
            col = 0
            for j in nb:
                if j == i:
                    if H.shape[1] != n_i:
                        raise DimensionMismatch(
                            f"subsystem[{i}]: own-state constraint has {H.shape[1]} "
                            f"columns, state dimension is {n_i}"
                        )
                    lift[:, col:col + n_i] = H
                col += dims[j][0]
            H = lift
        elif over != "neighborhood":
            raise ModelFileError(
                f"subsystem[{i}].state_constraints.over must be 'own' or 'neighborhood'"
            )
        state_poly = Polytope(H, h)

        ic = sd["input_constraints"]
        input_poly = Polytope(
            _parse_matrix(ic["H"], f"subsystem[{i}].input_constraints.H"),
            np.array(ic["h"], dtype=float).ravel(),
        )

        p_x = sd.get("p_x", p_x_default)
        p_u = sd.get("p_u", p_u_default)
        if p_x is None or p_u is None:
            raise ModelFileError(
                f"subsystem[{i}]: probability levels missing (probability section "
                "or per-subsystem override required)"
            )
        p_x, p_u = float(p_x), float(p_u)

        K_block = None
        if gain is not None:
            kseq = gain.get("K")
            if kseq is None or len(kseq) != M:
                raise ModelFileError("gain.K must list one block per subsystem")
            K_block = _parse_matrix(kseq[i], f"gain.K[{i}]")

        subsystems.append(SubsystemSpec(
            index=i, n=n_i, m=m_i, l=l_i, neighbors=nb,
            A_blocks={j: _arr(b) for j, b in A_blocks.items()},
            B=_arr(sd["B"]),
            C_blocks={j: _arr(b) for j, b in C_blocks.items()},
            noise_cov=_arr(W),
            state_poly=state_poly, input_poly=input_poly,
            p_x=p_x, p_u=p_u,
            Q=_arr(weight("Q", i, n_i)),
            R=_arr(weight("R", i, m_i)),
            T=_arr(weight("T", i, l_i)),
            K_block=_arr(K_block) if K_block is not None else None,
        ))

    gain_from_config = gain is not None
    if not gain_from_config:
        # Dense LQR helper: only valid when every neighborhood spans the network.
        full = tuple(range(M))
        for i, nb in enumerate(neighborhoods):
            if tuple(nb) != full:
                raise ModelFileError(
                    "no gain section and the coupling graph is not fully connected: "
                    "the dense LQR helper cannot produce a structured gain "
                    f"(subsystem {i} has neighborhood {nb})"
                )
        # Assemble once (without stability checks) to get the global matrices.
        (A, B, _, _, _, _, selectors, _, _, offsets) = assemble_global(
            subsystems_with_zero_gain(subsystems), neighborhoods
        )
        xoff, uoff, _ = offsets
        n, m = A.shape[0], B.shape[1]
        Qg = np.zeros((n, n))
        Rg = np.zeros((m, m))
        for i, sub in enumerate(subsystems):
            Qg[xoff[i]:xoff[i + 1], xoff[i]:xoff[i + 1]] = sub.Q
            Rg[uoff[i]:uoff[i + 1], uoff[i]:uoff[i + 1]] = sub.R
        K = lqr_gain(A, B, Qg, Rg)
        new_subs = []
        for i, sub in enumerate(subsystems):
            blk = K[uoff[i]:uoff[i + 1], :] @ selectors[i].T
            new_subs.append(SubsystemSpec(**{**sub.__dict__, "K_block": _arr(blk)}))
        subsystems = new_subs

    return build_network(subsystems, neighborhoods, gain_from_config=gain_from_config)


def subsystems_with_zero_gain(subsystems):
    out = []
    for s in subsystems:
        nn = sum(sub.n for sub in subsystems if sub.index in s.neighbors)
        out.append(SubsystemSpec(**{**s.__dict__, "K_block": _arr(np.zeros((s.m, nn)))}))
    return out


def load_network(path):
    """Load and validate a model file (JSON).

    Schema (all matrices row-major nested arrays, all indices 0-based)::

        {
          "horizon":     {"N": 7},
          "probability": {"p_x": 0.7, "p_u": 0.7, "distribution": "gaussian"},
          "graph":       {"neighbors": {"0": [0,1,2], "1": [0,1,2], "2": [0,1,2]}},
          "subsystem": [
            {"A": {"0": [[...]], "1": [[...]]},
             "B": [[...]],
             "C": {"0": [[...]]},
             "noise_cov": [[...]],
             "state_constraints": {"H": [[...]], "h": [...], "over": "own"},
             "input_constraints": {"H": [[...]], "h": [...]}},
            ...
          ],
          "weights": {"Q": [..per subsystem..], "R": [...], "T": [...]},
          "gain":    {"K": [..one block per subsystem..]}   // optional
        }

    When the ``gain`` section is absent a dense LQR gain is computed from the
    global matrices and the Q/R weights; this requires a fully connected
    coupling graph.  ``state_constraints.over`` is ``"own"`` (rows span the
    subsystem's own state, the default) or ``"neighborhood"`` (rows span the
    stacked neighborhood state, neighbors ascending).
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFileError(f"{path}: not valid JSON ({exc})") from exc
    return network_from_dict(doc)


def horizon_from_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        return int(doc["horizon"]["N"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError("horizon.N missing or not an integer") from exc


def distribution_from_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return doc.get("probability", {}).get("distribution", "gaussian")


def network_to_dict(model):
    """Serialize a NetworkModel back to the model-file schema.

    Loading the result reproduces the original matrices bit for bit (floats
    round-trip exactly through JSON's shortest-repr encoding).
    """
    doc = {
        "probability": {"distribution": "gaussian"},
        "graph": {"neighbors": {str(i): list(nb) for i, nb in enumerate(model.neighborhoods)}},
        "subsystem": [],
        "weights": {"Q": [], "R": [], "T": []},
        "gain": {"K": []},
    }
    for i, sub in enumerate(model.subsystems):
        doc["subsystem"].append({
            "A": {str(j): np.asarray(b).tolist() for j, b in sorted(sub.A_blocks.items())},
            "B": np.asarray(sub.B).tolist(),
            "C": {str(j): np.asarray(b).tolist() for j, b in sorted(sub.C_blocks.items())},
            "noise_cov": np.asarray(sub.noise_cov).tolist(),
            "state_constraints": {
                "H": np.asarray(sub.state_poly.H).tolist(),
                "h": np.asarray(sub.state_poly.h).tolist(),
                "over": "neighborhood",
            },
            "input_constraints": {
                "H": np.asarray(sub.input_poly.H).tolist(),
                "h": np.asarray(sub.input_poly.h).tolist(),
            },
            "p_x": sub.p_x,
            "p_u": sub.p_u,
        })
        doc["weights"]["Q"].append(np.asarray(sub.Q).tolist())
        doc["weights"]["R"].append(np.asarray(sub.R).tolist())
        doc["weights"]["T"].append(np.asarray(sub.T).tolist())
        doc["gain"]["K"].append(np.asarray(sub.K_block).tolist())
    return doc
