import json

import numpy as np
import pytest

from dsmpc.artifact import hash_model_file, load_artifact, save_artifact, synthesize
from dsmpc.errors import ArtifactModelMismatch, ModelFileError
from dsmpc.ocp import build_ocp, dump_ocp, load_ocp_dump
from dsmpc.solver import ConicQp, SolverSettings, solve_centralized

from conftest import triple_model_doc


class TestArtifactRoundTrip:
    def test_save_load_bit_exact(self, triple_artifact, tmp_path):
        path = tmp_path / "artifact.json"
        save_artifact(triple_artifact, path)
        loaded = load_artifact(path)
        a, b = triple_artifact, loaded
        assert np.array_equal(a.schedule.exact, b.schedule.exact)
        assert np.array_equal(a.schedule.bounded_stationary,
                              b.schedule.bounded_stationary)
        assert np.array_equal(a.lyapunov.P, b.lyapunov.P)
        assert np.array_equal(a.terminal.P_f, b.terminal.P_f)
        assert np.array_equal(a.terminal.P_z, b.terminal.P_z)
        assert np.array_equal(a.K, b.K)
        for t in range(a.N):
            assert np.array_equal(a.tightened.state[t].h, b.tightened.state[t].h)
        assert np.array_equal(a.tightened.state_terminal.h,
                              b.tightened.state_terminal.h)
        assert a.policy == b.policy

    def test_loaded_schedule_still_validates(self, triple_artifact, tmp_path):
        path = tmp_path / "artifact.json"
        save_artifact(triple_artifact, path)
        assert load_artifact(path).schedule.validate() >= -1e-9

    def test_hash_binding(self, triple_model, tmp_path):
        model_path = tmp_path / "model.json"
        model_path.write_text(json.dumps(triple_model_doc()))
        art = synthesize(triple_model, 7, model_hash=hash_model_file(model_path))
        art.verify_model_bytes(model_path.read_bytes())
        with pytest.raises(ArtifactModelMismatch):
            art.verify_model_bytes(model_path.read_bytes() + b" ")

    def test_version_gate(self, triple_artifact, tmp_path):
        path = tmp_path / "artifact.json"
        save_artifact(triple_artifact, path)
        doc = json.loads(path.read_text())
        doc["version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelFileError):
            load_artifact(path)


class TestOcpDump:
    def test_dump_parses_back_and_solves_identically(self, triple_model,
                                                     triple_artifact, tmp_path):
        spec = build_ocp(triple_model, triple_artifact.tightened,
                         triple_artifact.terminal, triple_artifact.lyapunov.P,
                         7, np.array([-1.0, 0.0, 1.0]))
        path = tmp_path / "ocp.txt"
        dump_ocp(spec, path)
        doc = load_ocp_dump(path)
        assert np.array_equal(doc["HESSIAN"], spec.P_hess)
        assert np.array_equal(doc["OPERATOR"], spec.A_rows)
        assert np.array_equal(doc["LINEAR"].ravel(), spec.q)
        assert doc["meta"]["ELLIPSOID_SHAPE.start"] == spec.ellipsoid.start

        # external-solver style cross-check: rebuild the QP from the dump
        from dsmpc.solver import EllipsoidBlock

        lo = doc["LOWER"].ravel().copy()
        hi = doc["UPPER"].ravel().copy()
        z0 = np.zeros(6)
        lo[:6] = z0
        hi[:6] = z0
        qp = ConicQp(
            P=doc["HESSIAN"], q=doc["LINEAR"].ravel(), A=doc["OPERATOR"],
            lo=lo, hi=hi,
            ellipsoids=(EllipsoidBlock(
                start=int(doc["meta"]["ELLIPSOID_SHAPE.start"]),
                shape=doc["ELLIPSOID_SHAPE"],
                level=doc["meta"]["ELLIPSOID_SHAPE.level"]),),
        )
        sol = solve_centralized(qp, SolverSettings(eps_abs=1e-9, eps_rel=1e-9,
                                                   max_iter=100000))
        from dsmpc.ocp import solve_ocp

        ref = solve_ocp(spec, z0, mode=1,
                        settings=SolverSettings(eps_abs=1e-9, eps_rel=1e-9,
                                                max_iter=100000))
        assert np.max(np.abs(sol.x[:6 * 8].reshape(8, 6) - ref.Z)) < 1e-6


class TestResidualLog:
    def test_log_written(self, tmp_path):
        log = tmp_path / "residuals.csv"
        qp = ConicQp(P=2 * np.eye(3), q=np.array([1.0, -2.0, 0.5]), A=np.eye(3),
                     lo=-np.ones(3), hi=np.ones(3))
        st = SolverSettings(residual_log=str(log), check_every=5)
        sol = solve_centralized(qp, st)
        assert sol.status == "optimal"
        lines = log.read_text().strip().splitlines()
        assert lines[0] == "iteration,r_prim,r_dual"
        assert len(lines) >= 2
        last = lines[-1].split(",")
        assert int(last[0]) == sol.iterations
