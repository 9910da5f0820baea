"""Error-covariance propagation, probabilistic reachable boxes, tightening.

The prediction error of the tube controller evolves as ``e+ = A_K e + w``
from ``e(0) = 0``, so its covariance sequence is known offline.  This module
propagates that sequence exactly and through a distributed block-diagonal
upper bound, converts covariances into axis-aligned probabilistic reachable
boxes, and shrinks the constraint polytopes by the exact Pontryagin
difference with those boxes.

All functions are pure; inputs are never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import gammaincinv

from .errors import (
    DimensionMismatch,
    DistributedBoundDiverges,
    EmptyTightenedSet,
    InvalidProbability,
    NegativeDiagonal,
    NotSchurStable,
)
from .model import Polytope, spectral_radius

PSD_TOL = 1e-9


def _sym(mat):
    return 0.5 * (mat + mat.T)


def propagate_exact(A_K, noise_cov, N):
    """Exact covariance sequence: S(0) = 0, S(t+1) = A_K S(t) A_K' + W.

    Returns an ``(N+1, n, n)`` array; each entry is symmetrized to suppress
    float asymmetry.
    """
    A_K = np.asarray(A_K, dtype=float)
    W = np.asarray(noise_cov, dtype=float)
    n = A_K.shape[0]
    out = np.zeros((N + 1, n, n))
    for t in range(N):
        out[t + 1] = _sym(A_K @ out[t] @ A_K.T + W)
    return out


def propagate_distributed(AK_rows, neighborhoods, noise_blocks, N):
    """Block-diagonal covariance upper bounds via the scaled local recursion.

    Each subsystem updates its own block using only its neighbors' blocks:

        S_i(t+1) = |N_i| * A_i S_{N_i}(t) A_i' + W_i

    where ``A_i = AK_rows[i]`` is the closed-loop row block over the stacked
    neighborhood state and ``S_{N_i}`` is the block diagonal of the neighbors'
    current blocks.  The sqrt(|N_i|) scaling of the row block appears squared.

    Returns a list of ``(N+1, n_i, n_i)`` arrays, one per subsystem.
    """
    M = len(AK_rows)
    sizes = [W.shape[0] for W in noise_blocks]
    out = [np.zeros((N + 1, sz, sz)) for sz in sizes]
    for t in range(N):
        for i in range(M):
            nb = neighborhoods[i]
            S_nb = _block_diag([out[j][t] for j in nb])
            blk = len(nb) * AK_rows[i] @ S_nb @ AK_rows[i].T + noise_blocks[i]
            out[i][t + 1] = _sym(blk)
    return out


def _block_diag(blocks):
    total = sum(b.shape[0] for b in blocks)
    out = np.zeros((total, total))
    r = 0
    for b in blocks:
        out[r:r + b.shape[0], r:r + b.shape[0]] = b
        r += b.shape[0]
    return out


def steady_state_cov(A_K, noise_cov, tol=1e-10, max_iter=200):
    """Stationary covariance: the fixed point of S = A_K S A_K' + W.

    Computed by the squaring trick (S <- S + A S A', A <- A^2), which converges
    quadratically for Schur-stable A_K.  The residual of the fixed-point
    equation is verified to be at most ``tol`` in max-norm.
    """
    A_K = np.asarray(A_K, dtype=float)
    W = np.asarray(noise_cov, dtype=float)
    rho = spectral_radius(A_K)
    if rho >= 1.0:
        raise NotSchurStable(f"rho(A_K) = {rho:.6f} >= 1, no stationary covariance")
    S = W.copy()
    Ac = A_K.copy()
    for _ in range(max_iter):
        Sn = _sym(S + Ac @ S @ Ac.T)
        Ac = Ac @ Ac
        if np.max(np.abs(Sn - S)) < 0.1 * tol:
            S = Sn
            break
        S = Sn
    resid = np.max(np.abs(A_K @ S @ A_K.T + W - S))
    if resid > tol:
        raise NotSchurStable(
            f"stationary covariance residual {resid:.3e} exceeds tol {tol:.1e}"
        )
    return S


def steady_state_cov_distributed(AK_rows, neighborhoods, noise_blocks,
                                 tol=1e-10, max_iter=5000):
    """Fixed point of the scaled block recursion, one block per subsystem.

    The sqrt(|N_i|) scaling can destroy convergence even when A_K itself is
    Schur stable; in that case the offending spectral radius is reported so
    the tube gain can be redesigned.
    """
    M = len(AK_rows)
    scaled_rho = _scaled_radius(AK_rows, neighborhoods, noise_blocks)
    if scaled_rho >= 1.0:
        raise DistributedBoundDiverges(
            f"scaled closed loop has spectral radius {scaled_rho:.6f} >= 1; "
            "the block-diagonal covariance bound has no fixed point",
            spectral_radius=scaled_rho,
        )
    blocks = [np.zeros_like(W) for W in noise_blocks]
    for _ in range(max_iter):
        new = []
        for i in range(M):
            nb = neighborhoods[i]
            S_nb = _block_diag([blocks[j] for j in nb])
            new.append(_sym(len(nb) * AK_rows[i] @ S_nb @ AK_rows[i].T
                            + noise_blocks[i]))
        delta = max(np.max(np.abs(a - b)) for a, b in zip(new, blocks))
        blocks = new
        if delta < tol:
            return blocks
    raise DistributedBoundDiverges(
        f"scaled block recursion did not reach tol {tol:.1e} in {max_iter} "
        f"iterations (scaled spectral radius {scaled_rho:.6f})",
        spectral_radius=scaled_rho,
    )


def _scaled_radius(AK_rows, neighborhoods, noise_blocks):
    """Spectral radius of the sqrt(|N_i|)-scaled closed-loop matrix."""
    sizes = [W.shape[0] for W in noise_blocks]
    off = np.concatenate([[0], np.cumsum(sizes)])
    n = int(off[-1])
    scaled = np.zeros((n, n))
    for i, row in enumerate(AK_rows):
        cols = np.concatenate([np.arange(off[j], off[j + 1]) for j in neighborhoods[i]])
        scaled[off[i]:off[i + 1], cols] = np.sqrt(len(neighborhoods[i])) * row
    return spectral_radius(scaled)


def chebyshev_gamma(n, p):
    """Distribution-free scaling gamma = n / (1 - p) for the n-dim box."""
    if not 0.0 < p < 1.0:
        raise InvalidProbability(f"probability level {p} outside (0,1)")
    if n < 1:
        raise InvalidProbability(f"dimension {n} must be at least 1")
    return n / (1.0 - p)


def gaussian_gamma(n, p):
    """Chi-squared quantile: the tight scaling for normally distributed noise.

    Equals the inverse of the regularized lower incomplete gamma function at
    probability ``p`` (with shape n/2, scaled by 2).  Always at most
    ``chebyshev_gamma(n, p)``.
    """
    if not 0.0 < p < 1.0:
        raise InvalidProbability(f"probability level {p} outside (0,1)")
    if n < 1:
        raise InvalidProbability(f"dimension {n} must be at least 1")
    return float(2.0 * gammaincinv(0.5 * n, p))


@dataclass(frozen=True)
class PrsBox:
    """Axis-aligned box { e : |e_j| <= radii_j }."""

    radii: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        if np.any(~np.isfinite(r)) or np.any(r < 0.0):
            raise NegativeDiagonal("box radii must be finite and nonnegative")
        r = r.copy()
        r.setflags(write=False)
        object.__setattr__(self, "radii", r)

    def contains(self, e):
        return bool(np.all(np.abs(np.asarray(e)) <= self.radii))


def prs_box(cov, gamma):
    """Reachable box with radii sqrt(gamma * diag(cov))."""
    d = np.diag(np.asarray(cov, dtype=float)).copy()
    if np.min(d) < -1e-12:
        raise NegativeDiagonal(
            f"covariance diagonal has entry {np.min(d):.3e} below -1e-12"
        )
    if gamma < 0.0:
        raise InvalidProbability(f"gamma must be nonnegative, got {gamma}")
    np.clip(d, 0.0, None, out=d)
    return PrsBox(np.sqrt(gamma * d))


def tighten(poly, box):
    """Pontryagin difference of a polytope and an axis-aligned box.

    The support of the box along row normal H_j is sum_i |H_ji| r_i, so the
    offsets shrink row-wise; the row matrix is unchanged.
    """
    r = box.radii if isinstance(box, PrsBox) else np.asarray(box, dtype=float)
    if poly.dim != r.shape[0]:
        raise DimensionMismatch(
            f"box dimension {r.shape[0]} does not match polytope dimension {poly.dim}"
        )
    h_new = poly.h - np.abs(poly.H) @ r
    _check_nonempty(poly.H, h_new)
    return Polytope(poly.H, h_new)


def _check_nonempty(H, h, tol=1e-12):
    """Feasibility check; origin-in-set is a sufficient shortcut."""
    if np.all(h >= -tol):
        return
    worst = int(np.argmin(h))
    # Origin infeasible: decide by LP (the set may be shifted, not empty).
    d = H.shape[1]
    res = linprog(np.zeros(d), A_ub=H, b_ub=h, bounds=[(None, None)] * d,
                  method="highs")
    if res.status != 0:
        raise EmptyTightenedSet(
            f"tightened polytope is empty (most-shrunk row {worst}, "
            f"offset {h[worst]:.3e})",
            row=worst,
        )


@dataclass(frozen=True)
class GammaPolicy:
    """How probability levels map to box scalings.

    mode
        ``"per-constraint"``: each constraint row gets its own gamma with n =
        the number of state (input) coordinates its row touches and p = the
        owning subsystem's level.  ``"global"``: one gamma with n = the global
        state (input) dimension and p = the most demanding (smallest) level.
    distribution
        ``"gaussian"`` uses chi-squared quantiles, anything else the
        distribution-free scaling.
    """

    mode: str = "per-constraint"
    distribution: str = "gaussian"

    def __post_init__(self):
        if self.mode not in ("per-constraint", "global"):
            raise InvalidProbability(f"unknown gamma policy mode {self.mode!r}")

    def gamma(self, n, p):
        if self.distribution == "gaussian":
            return gaussian_gamma(n, p)
        return chebyshev_gamma(n, p)

    def row_gammas(self, H, owners, levels, global_dim):
        """One gamma per constraint row."""
        if self.mode == "global":
            g = self.gamma(global_dim, float(np.min(levels)))
            return np.full(H.shape[0], g)
        out = np.empty(H.shape[0])
        for j in range(H.shape[0]):
            n_row = max(1, int(np.count_nonzero(H[j])))
            out[j] = self.gamma(n_row, float(levels[owners[j]]))
        return out


@dataclass(frozen=True)
class CovarianceSchedule:
    """Exact and block-diagonal-bounded error/input covariance sequences.

    ``exact[t]`` and ``bounded[t]`` cover t = 0..N; ``bounded`` dominates
    ``exact`` at every step and both start at zero.  Input schedules are the
    congruence K S K'.
    """

    N: int
    exact: np.ndarray
    bounded: np.ndarray
    exact_stationary: np.ndarray
    bounded_stationary: np.ndarray
    input_exact: np.ndarray
    input_bounded: np.ndarray
    input_exact_stationary: np.ndarray
    input_bounded_stationary: np.ndarray

    def validate(self, tol=PSD_TOL):
        """Assert the structural invariants; returns the worst slack seen."""
        worst = np.inf
        if np.max(np.abs(self.exact[0])) > 0 or np.max(np.abs(self.bounded[0])) > 0:
            raise NegativeDiagonal("covariance sequences must start at zero")
        for t in range(self.N):
            worst = min(worst, _min_eig(self.exact[t + 1] - self.exact[t]))
            worst = min(worst, _min_eig(self.bounded[t] - self.exact[t]))
        worst = min(worst, _min_eig(self.exact_stationary - self.exact[self.N]))
        worst = min(worst, _min_eig(self.bounded[self.N] - self.exact[self.N]))
        worst = min(worst, _min_eig(self.bounded_stationary - self.exact_stationary))
        if worst < -tol:
            raise NegativeDiagonal(
                f"covariance schedule violates monotonicity/dominance by {worst:.3e}"
            )
        return worst


def _min_eig(mat):
    return float(np.linalg.eigvalsh(_sym(mat)).min())


def compute_schedule(model, N):
    """Build the full covariance schedule for a network model."""
    A_K = model.A_K
    K = model.K
    exact = propagate_exact(A_K, model.noise_cov, N)
    AK_rows = [model.local_AK_row(i) for i in range(model.M)]
    noise_blocks = [model.noise_cov[model.state_slice(i), model.state_slice(i)]
                    for i in range(model.M)]
    blocks = propagate_distributed(AK_rows, model.neighborhoods, noise_blocks, N)
    bounded = np.zeros_like(exact)
    for t in range(N + 1):
        for i in range(model.M):
            sl = model.state_slice(i)
            bounded[t, sl, sl] = blocks[i][t]
    exact_stat = steady_state_cov(A_K, model.noise_cov)
    stat_blocks = steady_state_cov_distributed(
        AK_rows, model.neighborhoods, noise_blocks
    )
    bounded_stat = np.zeros_like(exact_stat)
    for i in range(model.M):
        sl = model.state_slice(i)
        bounded_stat[sl, sl] = stat_blocks[i]

    def congr(S):
        return _sym(K @ S @ K.T)

    return CovarianceSchedule(
        N=N,
        exact=exact,
        bounded=bounded,
        exact_stationary=exact_stat,
        bounded_stationary=bounded_stat,
        input_exact=np.stack([congr(exact[t]) for t in range(N + 1)]),
        input_bounded=np.stack([congr(bounded[t]) for t in range(N + 1)]),
        input_exact_stationary=congr(exact_stat),
        input_bounded_stationary=congr(bounded_stat),
    )


@dataclass(frozen=True)
class TightenedSets:
    """Stage-wise and terminal-stage shrunken polytopes.

    ``state[t]`` and ``input[t]`` cover stages t = 0..N-1; the terminal-stage
    sets are tightened by the stationary reachable boxes.
    """

    state: tuple
    input: tuple
    state_terminal: Polytope
    input_terminal: Polytope

    @property
    def N(self):
        return len(self.state)


def _tighten_rows(H, h, owners, levels, cov, policy, global_dim):
    """Row-wise tightening where each row may carry its own gamma."""
    d = np.diag(cov).copy()
    if np.min(d) < -1e-12:
        raise NegativeDiagonal(
            f"covariance diagonal has entry {np.min(d):.3e} below -1e-12"
        )
    np.clip(d, 0.0, None, out=d)
    gammas = policy.row_gammas(H, owners, levels, global_dim)
    support = np.abs(H) @ np.sqrt(d)
    h_new = h - np.sqrt(gammas) * support
    _check_nonempty(H, h_new)
    return Polytope(H, h_new)


def build_tightened_sets(model, schedule, policy):
    """Shrink the state and input polytopes stage by stage.

    Stage sets use the block-diagonal bounded covariances; the terminal-stage
    sets use the bounded stationary covariance.  Every produced set is
    verified nonempty.
    """
    X, U = model.state_set, model.input_set
    px = model.p_x_levels()
    pu = model.p_u_levels()
    state = []
    inp = []
    for t in range(schedule.N):
        state.append(_tighten_rows(X.H, X.h, model.state_row_owner, px,
                                   schedule.bounded[t], policy, model.n))
        inp.append(_tighten_rows(U.H, U.h, model.input_row_owner, pu,
                                 schedule.input_bounded[t], policy, model.m))
    state_f = _tighten_rows(X.H, X.h, model.state_row_owner, px,
                            schedule.bounded_stationary, policy, model.n)
    input_f = _tighten_rows(U.H, U.h, model.input_row_owner, pu,
                            schedule.input_bounded_stationary, policy, model.m)
    return TightenedSets(
        state=tuple(state), input=tuple(inp),
        state_terminal=state_f, input_terminal=input_f,
    )
