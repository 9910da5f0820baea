import numpy as np
import pytest

from dsmpc.model import network_from_dict
from dsmpc.ocp import (
    OcpWorkspace,
    build_ocp,
    shift_solution,
    solution_residuals,
    solve_ocp,
    solve_ocp_distributed,
)
from dsmpc.sim import DisturbanceSampler
from dsmpc.solver import SolverSettings
from dsmpc.synthesis import admissible_steady_state, make_steady_state_oracle

from conftest import scalar_model_doc
from dsmpc.artifact import synthesize


@pytest.fixture(scope="module")
def triple_pack(triple_model, triple_artifact):
    spec = build_ocp(triple_model, triple_artifact.tightened,
                     triple_artifact.terminal, triple_artifact.lyapunov.P,
                     7, np.array([-1.0, 0.0, 1.0]))
    return triple_model, triple_artifact, spec


class TestBuild:
    def test_variable_count_example(self, triple_pack):
        _, _, spec = triple_pack
        # 8 states stages * 6 + 7 input stages * 3 + 6 + 3 + 3
        assert spec.nvar == 81

    def test_variable_count_scalar(self):
        doc = scalar_model_doc(a=0.5, k=-0.2)
        doc["horizon"]["N"] = 1
        m = network_from_dict(doc)
        art = synthesize(m, 1)
        spec = build_ocp(m, art.tightened, art.terminal, art.lyapunov.P, 1,
                         np.zeros(1))
        # z(0), z(1), v(0), z_s, v_s, y_s
        assert spec.nvar == 6

    def test_hessian_psd(self, triple_pack):
        _, _, spec = triple_pack
        assert np.linalg.eigvalsh(spec.P_hess).min() >= -1e-9

    def test_stage_rows_touch_only_their_stage(self, triple_pack):
        _, _, spec = triple_pack
        A = spec.A_rows
        for t in range(spec.N):
            rows = A[spec.state_rows(t)]
            mask = np.zeros(spec.nvar, dtype=bool)
            mask[spec.z_slice(t)] = True
            assert np.all(rows[:, ~mask] == 0.0)
            rows = A[spec.input_rows(t)]
            mask = np.zeros(spec.nvar, dtype=bool)
            mask[spec.v_slice(t)] = True
            assert np.all(rows[:, ~mask] == 0.0)

    def test_reference_changes_only_linear_term(self, triple_pack):
        _, _, spec = triple_pack
        spec2 = spec.with_reference(np.array([3.0, -1.0, 0.0]))
        assert np.array_equal(spec.P_hess, spec2.P_hess)
        assert np.array_equal(spec.A_rows, spec2.A_rows)
        diff = np.flatnonzero(spec.q != spec2.q)
        assert np.all(diff >= spec.ys_slice.start)


class TestSolve:
    def test_stationary_cost_zero(self, triple_pack):
        model, art, spec = triple_pack
        oracle = make_steady_state_oracle(model, art.tightened.state_terminal,
                                          art.tightened.input_terminal)
        z_s, v_s, y_s = admissible_steady_state(spec.y_ref, oracle,
                                                terminal_set=art.terminal)
        sol = solve_ocp(spec, z_s, mode=1)
        assert sol.optimal
        assert sol.objective < 1e-6
        assert np.max(np.abs(sol.Z - z_s[None, :])) < 1e-4

    def test_initial_state_outside_stage0_infeasible(self, triple_pack):
        _, _, spec = triple_pack
        bad = np.zeros(6)
        bad[1] = 2.0  # violates |x_2| <= 1
        sol = solve_ocp(spec, bad, mode=1)
        assert sol.status == "infeasible"
        assert sol.residuals["stage0_violation"] > 0.9

    def test_residual_certificates(self, triple_pack):
        _, _, spec = triple_pack
        sol = solve_ocp(spec, np.zeros(6), mode=1)
        assert sol.optimal
        assert sol.residuals["equality"] <= 1e-6
        assert sol.residuals["slack_min"] >= -1e-6
        assert sol.residuals["terminal_quad"] <= 1.0 + 1e-6


class TestShift:
    def test_stationary_plan_is_fixed_point(self, triple_pack):
        model, art, spec = triple_pack
        oracle = make_steady_state_oracle(model, art.tightened.state_terminal,
                                          art.tightened.input_terminal)
        z_s, v_s, _ = admissible_steady_state(spec.y_ref, oracle,
                                              terminal_set=art.terminal)
        sol = solve_ocp(spec, z_s, mode=1)
        plan = shift_solution(sol, model.K, model)
        assert np.max(np.abs(plan.Z - sol.Z)) < 1e-4
        assert np.max(np.abs(plan.V - sol.V)) < 1e-4

    def test_appended_input_is_vs_when_settled(self, triple_pack):
        model, art, spec = triple_pack
        oracle = make_steady_state_oracle(model, art.tightened.state_terminal,
                                          art.tightened.input_terminal)
        z_s, v_s, _ = admissible_steady_state(spec.y_ref, oracle,
                                              terminal_set=art.terminal)
        sol = solve_ocp(spec, z_s, mode=1)
        plan = shift_solution(sol, model.K, model)
        assert np.max(np.abs(plan.V[-1] - v_s)) < 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_shifted_plan_feasible_from_noisy_solves(self, triple_pack, seed):
        # the computational core of recursive feasibility: any optimal plan's
        # shift satisfies every constraint with the mode-2 initial condition
        model, art, spec = triple_pack
        rng = np.random.default_rng(seed)
        sampler = DisturbanceSampler("gaussian", model.noise_cov)
        x = sampler.draw(rng) * 3.0
        if np.any(model.state_set.H @ x > model.state_set.h):
            x = np.zeros(model.n)
        sol = solve_ocp(spec, x, mode=1)
        assert sol.optimal
        plan = shift_solution(sol, model.K, model)
        res = solution_residuals(spec, plan.as_vector(spec), z_init=plan.Z[0])
        assert res["equality"] <= 1e-6
        assert res["slack_min"] >= -1e-6
        assert res["terminal_quad"] <= 1.0 + 1e-6


class TestTranslationInvariance:
    def test_translated_reference_shifts_solution(self, triple_pack):
        # moving the reference by an interior admissible steady offset moves
        # the optimal trajectories by exactly the corresponding steady pair
        model, art, spec = triple_pack
        oracle = make_steady_state_oracle(model, art.tightened.state_terminal,
                                          art.tightened.input_terminal)
        y1 = np.array([-0.4, 0.1, 0.2])
        y2 = np.array([0.1, 0.3, -0.2])
        z1, v1, _ = admissible_steady_state(y1, oracle, terminal_set=art.terminal)
        z2, v2, _ = admissible_steady_state(y2, oracle, terminal_set=art.terminal)
        st = SolverSettings(eps_abs=1e-10, eps_rel=1e-10, max_iter=300000)
        ws = OcpWorkspace(spec.with_reference(y1), st)
        sol1 = ws.solve(z1, mode=1)
        ws2 = OcpWorkspace(spec.with_reference(y2), st)
        sol2 = ws2.solve(z2, mode=1)
        dz, dv = z2 - z1, v2 - v1
        assert np.max(np.abs((sol2.Z - sol1.Z) - dz[None, :])) < 1e-5
        assert np.max(np.abs((sol2.V - sol1.V) - dv[None, :])) < 1e-5


class TestDistributedBackend:
    def test_matches_centralized_at_origin(self, triple_pack):
        model, art, spec = triple_pack
        sol_c = solve_ocp(spec, np.zeros(6), mode=1,
                          settings=SolverSettings(eps_abs=1e-9, eps_rel=1e-9,
                                                  max_iter=100000))
        sol_d = solve_ocp_distributed(spec, model, art.terminal, np.zeros(6))
        assert sol_d.status == "optimal"
        gap = max(np.max(np.abs(sol_c.Z - sol_d.Z)),
                  np.max(np.abs(sol_c.V - sol_d.V)),
                  np.max(np.abs(sol_c.y_s - sol_d.y_s)))
        assert gap < 1e-4
        assert abs(sol_c.objective - sol_d.objective) < 1e-4 * max(1.0, sol_c.objective)
