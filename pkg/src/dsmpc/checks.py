"""Reduced-size invariant suite behind the ``check`` CLI command.

Each check returns ``(name, passed, detail)``.  These mirror the library's
structural guarantees at sample sizes small enough for an interactive run;
the test suite exercises the same properties at full size.
"""

from __future__ import annotations

import numpy as np

from .artifact import synthesize
from .errors import DsmpcError
from .model import spectral_radius
from .ocp import OcpWorkspace, build_ocp, shift_solution, solution_residuals, solve_ocp_distributed
from .sim import DisturbanceSampler, ScenarioSpec, run_closed_loop
from .solver import SolverSettings
from .uncertainty import chebyshev_gamma, gaussian_gamma, prs_box, tighten


def run_checks(model, N, policy):
    """Run every check; returns a list of (name, ok, detail)."""
    results = []

    def record(name, fn):
        try:
            ok, detail = fn()
        except DsmpcError as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, ok, detail))

    try:
        art = synthesize(model, N, policy)
        results.append(("offline synthesis", True, f"horizon {N}"))
    except DsmpcError as exc:
        results.append(("offline synthesis", False,
                        f"{type(exc).__name__}: {exc}"))
        return results

    record("closed-loop spectral radius",
           lambda: _check_rho(model))
    record("covariance monotonicity and dominance",
           lambda: _check_schedule(art))
    record("reachable-box nestedness",
           lambda: _check_nestedness(art))
    record("gaussian vs distribution-free scaling",
           lambda: _check_gamma_order())
    record("tightening monotone in radii",
           lambda: _check_tighten_monotone(model))
    record("empirical reachable-set coverage",
           lambda: _check_coverage(model, art, policy))
    record("quadratic cost residual",
           lambda: (art.lyapunov.residual <= 1e-8,
                    f"residual {art.lyapunov.residual:.2e}"))
    record("terminal-set invariance (sampled)",
           lambda: _check_terminal_invariance(model, art))
    record("terminal-set admissibility (sampled)",
           lambda: _check_terminal_admissibility(model, art))
    record("shifted-plan feasibility",
           lambda: _check_shift_feasibility(model, art))
    record("zero-noise cost decrease",
           lambda: _check_zero_noise(model, art))
    record("centralized vs distributed backend",
           lambda: _check_backends(model, art))
    return results


def _check_rho(model):
    rho = spectral_radius(model.A_K)
    return rho < 1.0, f"rho(A+BK) = {rho:.6f}"


def _check_schedule(art):
    worst = art.schedule.validate()
    return worst >= -1e-9, f"worst eigenvalue slack {worst:.2e}"


def _check_nestedness(art):
    sched = art.schedule
    gam = 1.0  # nestedness is scale-free in gamma
    prev = prs_box(sched.bounded[0], gam).radii
    worst = 0.0
    for t in range(1, sched.N + 1):
        cur = prs_box(sched.bounded[t], gam).radii
        worst = min(worst, float(np.min(cur - prev)))
        prev = cur
    stat = prs_box(sched.bounded_stationary, gam).radii
    worst = min(worst, float(np.min(stat - prev)))
    return worst >= -1e-12, f"worst radius decrease {worst:.2e}"


def _check_gamma_order():
    worst = np.inf
    for n in range(1, 11):
        for p in (0.5, 0.7, 0.9, 0.99):
            worst = min(worst, chebyshev_gamma(n, p) - gaussian_gamma(n, p))
    return worst >= 0.0, f"min (chebyshev - gaussian) = {worst:.3f}"


def _check_tighten_monotone(model):
    rng = np.random.default_rng(0)
    X = model.state_set
    for _ in range(20):
        r1 = rng.uniform(0.0, 0.05, model.n)
        r2 = r1 + rng.uniform(0.0, 0.05, model.n)
        h1 = tighten(X, prs_box(np.diag(r1**2), 1.0)).h
        h2 = tighten(X, prs_box(np.diag(r2**2), 1.0)).h
        if np.any(h2 > h1 + 1e-12):
            return False, "larger radii produced larger offsets"
    return True, "20 random radius pairs"


def _check_coverage(model, art, policy, samples=20000, t_check=3):
    rng = np.random.default_rng(1)
    sampler = DisturbanceSampler("gaussian", model.noise_cov)
    A_K = model.A_K
    e = np.zeros((samples, model.n))
    for _ in range(t_check):
        e = e @ A_K.T + sampler.draw(rng, size=samples)
    p = float(np.min(model.p_x_levels()))
    gam = policy.gamma(model.n, p)
    radii = prs_box(art.schedule.exact[t_check], gam).radii
    inside = np.mean(np.all(np.abs(e) <= radii, axis=1))
    # joint coverage of the global box at the global scaling
    ok = inside >= p - 0.02
    return ok, f"{inside:.3f} vs target {p:.2f} (t={t_check})"


def _check_terminal_invariance(model, art, count=200):
    term = art.terminal
    rng = np.random.default_rng(2)
    n, m = model.n, model.m
    P_tr = term.augmented_shape()
    L = np.linalg.cholesky(np.linalg.inv(P_tr))
    worst = 0.0
    for _ in range(count):
        d = rng.standard_normal(2 * n + m)
        alpha = L @ (d / np.linalg.norm(d))  # boundary point
        dz, zs, vs = alpha[:n], alpha[n:2 * n], alpha[2 * n:]
        dz_next = model.A_K @ dz
        worst = max(worst, term.value(dz_next, zs, vs))
    return worst <= 1.0 + 1e-9, f"max successor level {worst:.9f}"


def _check_terminal_admissibility(model, art, count=200):
    term = art.terminal
    Z_f, V_f = art.tightened.state_terminal, art.tightened.input_terminal
    rng = np.random.default_rng(3)
    n, m = model.n, model.m
    P_tr = term.augmented_shape()
    L = np.linalg.cholesky(np.linalg.inv(P_tr))
    worst = np.inf
    for _ in range(count):
        d = rng.standard_normal(2 * n + m)
        r = rng.uniform() ** (1.0 / (2 * n + m))
        alpha = L @ (r * d / np.linalg.norm(d))
        dz, zs, vs = alpha[:n], alpha[n:2 * n], alpha[2 * n:]
        worst = min(worst, float(np.min(Z_f.h - Z_f.H @ (dz + zs))))
        worst = min(worst, float(np.min(V_f.h - V_f.H @ (model.K @ dz + vs))))
    return worst >= -1e-9, f"min constraint slack {worst:.2e}"


def _check_shift_feasibility(model, art):
    spec = build_ocp(model, art.tightened, art.terminal, art.lyapunov.P,
                     art.N, np.zeros(model.l))
    ws = OcpWorkspace(spec)
    sol = ws.solve(np.zeros(model.n), mode=1)
    if not sol.optimal:
        return False, f"seed solve status {sol.status}"
    plan = shift_solution(sol, model.K, model)
    x = plan.as_vector(spec)
    res = solution_residuals(spec, x, z_init=plan.Z[0])
    ok = res["equality"] <= 1e-6 and res["slack_min"] >= -1e-6 \
        and res["terminal_quad"] <= 1.0 + 1e-6
    return ok, (f"equality {res['equality']:.1e}, slack {res['slack_min']:.1e}, "
                f"terminal {res['terminal_quad']:.6f}")


def _small_admissible_reference(model, art, scale=0.1):
    """A guaranteed-admissible nonzero reference for self-checks."""
    from .synthesis import admissible_steady_state, make_steady_state_oracle

    oracle = make_steady_state_oracle(model, art.tightened.state_terminal,
                                      art.tightened.input_terminal)
    _, _, y_s = admissible_steady_state(scale * np.ones(model.l), oracle,
                                        terminal_set=art.terminal)
    return y_s


def _check_zero_noise(model, art, steps=20):
    y_ref = _small_admissible_reference(model, art)
    scen = ScenarioSpec(initial_state=np.zeros(model.n),
                        segments=((0, y_ref),), steps=steps, runs=1, seed=0,
                        distribution="none")
    st = SolverSettings(eps_abs=1e-9, eps_rel=1e-9, max_iter=100000)
    trace = run_closed_loop(model, art, scen, settings=st)
    worst = float(np.max(np.diff(trace.objective))) if steps > 1 else 0.0
    return worst <= 1e-7, f"max objective increase {worst:.2e}"


def _check_backends(model, art):
    y_ref = _small_admissible_reference(model, art, scale=0.2)
    spec = build_ocp(model, art.tightened, art.terminal, art.lyapunov.P,
                     art.N, y_ref)
    sol_c = OcpWorkspace(spec).solve(np.zeros(model.n), mode=1)
    sol_d = solve_ocp_distributed(spec, model, art.terminal, np.zeros(model.n))
    gap = max(float(np.max(np.abs(sol_c.Z - sol_d.Z))),
              float(np.max(np.abs(sol_c.V - sol_d.V))))
    return gap <= 1e-4, f"variable gap {gap:.2e}"
