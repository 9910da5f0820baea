"""Closed-loop Monte-Carlo engine.

Each run simulates the plant under the tube control law with the conditional
initialization: the nominal plan starts from the measured state when that is
feasible (mode 1) and from the previous shifted plan otherwise (mode 2).
Disturbances are sampled per run from streams derived deterministically from
the master seed and the run index, so results are independent of execution
order and of the number of workers; aggregation is a plain reduction over
run-indexed arrays.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InitialInfeasible, ModelFileError, NotPD
from .ocp import (
    MODE1_RESIDUAL_LIMIT,
    MODE1_ROW_TOL,
    OcpWorkspace,
    _infeasible_solution,
    _stage0_violation,
    build_ocp,
    shift_solution,
    solve_ocp_distributed,
)


@dataclass(frozen=True)
class ScenarioSpec:
    """Closed-loop experiment description."""

    initial_state: np.ndarray
    segments: tuple  # ((k_start, y_ref), ...) ascending, first at 0
    steps: int
    runs: int
    seed: int
    distribution: str = "gaussian"

    def __post_init__(self):
        x0 = np.asarray(self.initial_state, dtype=float)
        object.__setattr__(self, "initial_state", x0)
        segs = tuple((int(k), np.asarray(y, dtype=float)) for k, y in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs or segs[0][0] != 0:
            raise ModelFileError("first reference segment must start at step 0")
        starts = [k for k, _ in segs]
        if sorted(starts) != starts or len(set(starts)) != len(starts):
            raise ModelFileError("reference segments must have ascending start steps")
        if self.runs < 1 or self.steps < 1:
            raise ModelFileError("runs and steps must be at least 1")
        if self.distribution not in ("gaussian", "uniform", "none"):
            raise ModelFileError(f"unknown distribution tag {self.distribution!r}")

    def reference_at(self, k):
        y = self.segments[0][1]
        for start, ref in self.segments:
            if start <= k:
                y = ref
            else:
                break
        return y

    def segment_spans(self):
        """(start, end_exclusive, y_ref) per segment within the run length."""
        spans = []
        for idx, (start, y) in enumerate(self.segments):
            end = self.segments[idx + 1][0] if idx + 1 < len(self.segments) \
                else self.steps
            spans.append((start, min(end, self.steps), y))
        return spans


def load_scenario(path):
    """Scenario file schema::

        {
          "initial_state": [..n..],
          "segments": [[0, [..l..]], [25, [..l..]], ...],
          "steps": 75, "runs": 1000, "seed": 1,
          "distribution": "gaussian"
        }
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFileError(f"{path}: not valid JSON ({exc})") from exc
    try:
        return ScenarioSpec(
            initial_state=np.asarray(doc["initial_state"], dtype=float),
            segments=tuple((int(k), np.asarray(y, dtype=float))
                           for k, y in doc["segments"]),
            steps=int(doc["steps"]),
            runs=int(doc.get("runs", 1)),
            seed=int(doc.get("seed", 0)),
            distribution=doc.get("distribution", "gaussian"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"{path}: malformed scenario ({exc})") from exc


def run_rng(master_seed, run_index):
    """Independent, order-insensitive per-run generator."""
    return np.random.default_rng(np.random.SeedSequence((master_seed, run_index)))


def sample_disturbance(distribution, noise_cov, rng):
    """One disturbance draw matching the given covariance.

    Gaussian draws use the Cholesky factor; uniform draws are independent per
    coordinate on [-a_j, a_j] with a_j = sqrt(3 * diag_j), which matches the
    covariance diagonal.  Both families are central convex unimodal.
    """
    sampler = DisturbanceSampler(distribution, noise_cov)
    return sampler.draw(rng)


class DisturbanceSampler:
    def __init__(self, distribution, noise_cov):
        self.distribution = distribution
        cov = np.asarray(noise_cov, dtype=float)
        self.n = cov.shape[0]
        if distribution == "none":
            return
        if distribution == "gaussian":
            try:
                self._chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as exc:
                raise NotPD("noise covariance must be positive definite to "
                            "sample gaussian disturbances") from exc
        elif distribution == "uniform":
            d = np.diag(cov)
            if np.any(d <= 0.0):
                raise NotPD("noise covariance diagonal must be positive to "
                            "sample uniform disturbances")
            self._width = np.sqrt(3.0 * d)
        else:
            raise ModelFileError(f"unknown distribution tag {distribution!r}")

    def draw(self, rng, size=None):
        if self.distribution == "none":
            shape = (self.n,) if size is None else (size, self.n)
            return np.zeros(shape)
        if self.distribution == "gaussian":
            xi = rng.standard_normal((self.n,) if size is None else (size, self.n))
            return xi @ self._chol.T
        xi = rng.uniform(-1.0, 1.0, (self.n,) if size is None else (size, self.n))
        return xi * self._width


@dataclass
class ClosedLoopTrace:
    """Per-step records of one closed-loop run; replayable from ``w``."""

    x: np.ndarray          # (steps+1, n)
    u: np.ndarray          # (steps, m)
    w: np.ndarray          # (steps, n)
    z0: np.ndarray         # (steps, n) nominal initial state used at k
    y: np.ndarray          # (steps+1, l)
    mode: np.ndarray       # (steps,) 1 or 2
    status: list           # per step solver status
    objective: np.ndarray  # (steps,)
    infeasible_events: int
    run_index: int = -1


def run_closed_loop(model, artifact, scenario, run_seed=None, workspace=None,
                    w_sequence=None, run_index=0, backend="centralized",
                    settings=None):
    """Simulate one closed-loop run; deterministic given the seed material.

    ``w_sequence`` overrides sampling (used for replay and zero-noise runs).
    A shared ``workspace`` may be passed to reuse the factorization; its warm
    state is reset so runs stay order-independent.
    """
    steps = scenario.steps
    n, m = model.n, model.m
    K = model.K

    if workspace is None:
        spec = build_ocp(model, artifact.tightened, artifact.terminal,
                         artifact.lyapunov.P, artifact.N,
                         scenario.segments[0][1])
        workspace = OcpWorkspace(spec, settings)
    workspace.reset()

    rng = run_rng(scenario.seed, run_index) if run_seed is None \
        else np.random.default_rng(run_seed)
    sampler = DisturbanceSampler(scenario.distribution, model.noise_cov)

    x = np.zeros((steps + 1, n))
    u = np.zeros((steps, m))
    w = np.zeros((steps, n))
    z0 = np.zeros((steps, n))
    mode = np.zeros(steps, dtype=int)
    status = []
    objective = np.zeros(steps)
    infeasible = 0

    x[0] = scenario.initial_state
    shifted = None
    prev_raw = None
    current_ref = None

    for k in range(steps):
        y_ref = scenario.reference_at(k)
        if current_ref is None or not np.array_equal(y_ref, current_ref):
            workspace.set_reference(y_ref)
            current_ref = y_ref

        warm = None
        if shifted is not None:
            warm = (shifted.as_vector(workspace.spec), prev_raw[1], prev_raw[2])

        sol = _solve_step(workspace, model, x[k], shifted, warm, k, backend,
                          artifact)
        if sol is None:
            raise InitialInfeasible(
                "closed-loop step 0 admits no feasible plan in either mode"
            )
        this_mode, plan = sol
        mode[k] = this_mode
        status.append(plan.status)
        if plan.status not in ("optimal",) and not (
            plan.status == "max_iter"
            and plan.residuals.get("equality", np.inf) < MODE1_RESIDUAL_LIMIT
        ):
            infeasible += 1

        z0[k] = plan.Z[0]
        objective[k] = plan.objective
        u[k] = plan.V[0] + K @ (x[k] - plan.Z[0])
        w[k] = w_sequence[k] if w_sequence is not None else sampler.draw(rng)
        x[k + 1] = model.A @ x[k] + model.B @ u[k] + w[k]

        shifted = shift_solution(plan, K, model)
        prev_raw = plan.raw

    y = x @ model.C.T
    return ClosedLoopTrace(x=x, u=u, w=w, z0=z0, y=y, mode=mode, status=status,
                           objective=objective, infeasible_events=infeasible,
                           run_index=run_index)


def _solve_step(workspace, model, x_k, shifted, warm, k, backend, artifact):
    """Mode-1 attempt with mode-2 fallback; returns (mode, solution) or None."""
    if backend == "distributed":
        def solver(z0, mode):
            if mode == 1:
                violation = _stage0_violation(workspace.spec, z0)
                if violation > MODE1_ROW_TOL:
                    return _infeasible_solution(workspace.spec, violation)
            return solve_ocp_distributed(workspace.spec, model,
                                         artifact.terminal, z0)
    else:
        def solver(z0, mode):
            return workspace.solve(z0, mode=mode, warm=warm)

    sol1 = solver(x_k, 1)
    if sol1.status != "infeasible":
        return 1, sol1
    if shifted is None:
        if k == 0:
            return None
        raise InitialInfeasible("no stored plan available for mode 2")
    sol2 = solver(shifted.Z[0], 2)
    return 2, sol2


@dataclass
class StatsReport:
    """Aggregated Monte-Carlo statistics; deterministic for a fixed seed."""

    runs: int
    steps: int
    state_rate: np.ndarray     # (steps+1, state rows) empirical satisfaction
    input_rate: np.ndarray     # (steps, input rows)
    mean_output: np.ndarray    # (steps+1, l)
    std_output: np.ndarray     # (steps+1, l)
    mean_objective: np.ndarray  # (steps,)
    mode2_per_step: np.ndarray  # (steps,)
    mode2_events: int
    infeasible_events: int
    segment_summaries: list    # per segment: dict with y_ref, terminal stats

    def min_state_rate(self, row=None):
        rates = self.state_rate if row is None else self.state_rate[:, row]
        return float(np.min(rates))


def empirical_satisfaction(traces, H_row, h_row, on_input=False):
    """Per-step fraction of runs satisfying one constraint row."""
    if not traces:
        raise ValueError("need at least one trace")
    values = np.stack([(t.u if on_input else t.x) @ np.asarray(H_row) for t in traces])
    return np.mean(values <= h_row, axis=0)


def _run_worker(args):
    model, artifact, scenario, run_index, settings, backend = args
    trace = run_closed_loop(model, artifact, scenario, run_index=run_index,
                            settings=settings, backend=backend)
    return trace


def monte_carlo(model, artifact, scenario, jobs=1, trace_callback=None,
                keep_traces=False, settings=None, backend="centralized"):
    """Independent closed-loop runs plus order-independent aggregation.

    ``trace_callback(trace)`` is invoked per run (in run order) so callers can
    stream traces to disk without holding all of them; ``keep_traces`` returns
    them on the report as ``report.traces``.
    """
    steps, runs = scenario.steps, scenario.runs
    Hx, hx = model.state_set.H, model.state_set.h
    Hu, hu = model.input_set.H, model.input_set.h

    state_ok = np.zeros((steps + 1, Hx.shape[0]))
    input_ok = np.zeros((steps, Hu.shape[0]))
    sum_y = np.zeros((steps + 1, model.l))
    sum_y2 = np.zeros((steps + 1, model.l))
    sum_obj = np.zeros(steps)
    mode2_per_step = np.zeros(steps)
    mode2_events = 0
    infeasible = 0
    traces = []

    def aggregate(trace):
        nonlocal mode2_events, infeasible
        state_ok_ = (trace.x @ Hx.T) <= hx[None, :]
        input_ok_ = (trace.u @ Hu.T) <= hu[None, :]
        state_ok[:] += state_ok_
        input_ok[:] += input_ok_
        sum_y[:] += trace.y
        sum_y2[:] += trace.y**2
        sum_obj[:] += trace.objective
        mode2_per_step[:] += trace.mode == 2
        mode2_events += int(np.sum(trace.mode == 2))
        infeasible += trace.infeasible_events
        if trace_callback is not None:
            trace_callback(trace)
        if keep_traces:
            traces.append(trace)

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for trace in pool.map(
                _run_worker,
                [(model, artifact, scenario, r, settings, backend)
                 for r in range(runs)],
                chunksize=max(1, runs // (jobs * 8)),
            ):
                aggregate(trace)
    else:
        workspace = _shared_workspace(model, artifact, scenario, settings)
        for r in range(runs):
            aggregate(run_closed_loop(model, artifact, scenario,
                                      workspace=workspace, run_index=r,
                                      backend=backend))

    mean_y = sum_y / runs
    var_y = np.maximum(sum_y2 / runs - mean_y**2, 0.0)
    report = StatsReport(
        runs=runs, steps=steps,
        state_rate=state_ok / runs,
        input_rate=input_ok / runs,
        mean_output=mean_y,
        std_output=np.sqrt(var_y),
        mean_objective=sum_obj / runs,
        mode2_per_step=mode2_per_step,
        mode2_events=mode2_events,
        infeasible_events=infeasible,
        segment_summaries=_segment_summaries(scenario, mean_y, var_y, runs),
    )
    if keep_traces:
        report.traces = traces
    return report


def _shared_workspace(model, artifact, scenario, settings=None):
    spec = build_ocp(model, artifact.tightened, artifact.terminal,
                     artifact.lyapunov.P, artifact.N, scenario.segments[0][1])
    return OcpWorkspace(spec, settings)


def _segment_summaries(scenario, mean_y, var_y, runs):
    out = []
    for start, end, y_ref in scenario.segment_spans():
        k_end = end - 1
        mean_end = mean_y[k_end]
        stderr = np.sqrt(var_y[k_end] / runs)
        out.append({
            "start": int(start),
            "end": int(end),
            "y_ref": np.asarray(y_ref).tolist(),
            "terminal_mean_output": mean_end.tolist(),
            "terminal_stderr": stderr.tolist(),
            "tracking_error_inf": float(np.max(np.abs(mean_end - y_ref))),
        })
    return out
