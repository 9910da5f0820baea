"""Benchmark: compiled ADMM core vs the pure-NumPy fallback.

Times the splitting iteration on the shipped three-subsystem tracking problem
(the workload that dominates a Monte-Carlo study) and on a batch of random
box QPs.  Both backends run the same preprocessed data, so the comparison is
iteration-loop overhead only.

    python benchmarks/bench_admm.py [--repeats 50]
"""

import argparse
import time
from importlib import resources

import numpy as np

from dsmpc import load_network
from dsmpc.artifact import synthesize
from dsmpc.ocp import OcpWorkspace, build_ocp
from dsmpc.solver import SolverSettings
from dsmpc.solver import _backend, _reference


def _example_workspace(settings):
    ref = resources.files("dsmpc.data").joinpath("coupled_triple.model.json")
    with resources.as_file(ref) as path:
        model = load_network(path)
    art = synthesize(model, 7)
    spec = build_ocp(model, art.tightened, art.terminal, art.lyapunov.P, 7,
                     np.array([-1.0, 0.0, 1.0]))
    return model, OcpWorkspace(spec, settings)


def bench_tracking_problem(repeats, backend):
    settings = SolverSettings(rho=0.3, eps_abs=1e-6, eps_rel=1e-6,
                              check_every=10)
    model, ws = _example_workspace(settings)
    rng = np.random.default_rng(0)
    # solve a spread of perturbed initial conditions, cold each time
    t_total = 0.0
    iters = 0
    for _ in range(repeats):
        x0 = rng.normal(scale=0.05, size=model.n)
        ws.reset()
        t0 = time.perf_counter()
        sol = ws.solve(x0, mode=1)
        t_total += time.perf_counter() - t0
        iters += sol.iterations
    return t_total / repeats, iters / repeats


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()

    rows = []
    for name, fn in (("compiled", None), ("numpy", _reference.run_admm)):
        orig = _backend.run_admm
        if fn is not None:
            _backend.run_admm = fn
        elif _backend.BACKEND != "compiled":
            print("compiled core unavailable; both rows use the NumPy loop")
        try:
            per_solve, per_iters = bench_tracking_problem(args.repeats, name)
        finally:
            _backend.run_admm = orig
        rows.append((name, per_solve, per_iters))
        print(f"{name:>9}: {1e3 * per_solve:8.2f} ms/solve "
              f"({per_iters:6.0f} iters, "
              f"{1e6 * per_solve / per_iters:6.1f} us/iter)")
    if len(rows) == 2 and rows[1][1] > 0:
        print(f"speedup: {rows[1][1] / rows[0][1]:.2f}x")


if __name__ == "__main__":
    main()
