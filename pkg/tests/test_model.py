import json

import numpy as np
import pytest

from dsmpc.errors import (
    DimensionMismatch,
    GraphNotBidirectional,
    ModelFileError,
    NoiseNotPD,
    NonSquare,
    RiccatiDivergence,
    UnboundedConstraintSet,
    UnstableClosedLoop,
)
from dsmpc.model import (
    Polytope,
    load_network,
    lqr_gain,
    network_from_dict,
    network_to_dict,
    spectral_radius,
)

from conftest import pair_model_doc, scalar_model_doc, triple_model_doc


class TestSpectralRadius:
    def test_diagonal(self):
        assert spectral_radius(np.diag([0.5, -0.8])) == pytest.approx(0.8, abs=1e-12)

    def test_nilpotent(self):
        assert spectral_radius(np.array([[0.0, 1.0], [0.0, 0.0]])) == pytest.approx(0.0, abs=1e-12)

    def test_non_square(self):
        with pytest.raises(NonSquare):
            spectral_radius(np.zeros((2, 3)))


class TestLqrGain:
    def test_scalar_golden_ratio(self):
        # P solves P = 1 + P - P^2/(1+P)  =>  P = (1+sqrt(5))/2
        A = np.array([[1.0]])
        B = np.array([[1.0]])
        K = lqr_gain(A, B, np.eye(1), np.eye(1))
        P = (1 + np.sqrt(5)) / 2
        assert K[0, 0] == pytest.approx(-P / (1 + P), abs=1e-10)

    def test_deadbeat_plant(self):
        # A = 0: K = 0 already optimal, P = Q
        K = lqr_gain(np.zeros((2, 2)), np.eye(2), np.diag([1.0, 2.0]), np.eye(2))
        assert np.allclose(K, 0.0, atol=1e-12)

    def test_stabilizes_example_network(self, triple_model):
        m = triple_model
        assert spectral_radius(m.A + m.B @ m.K) < 1.0

    def test_unstabilizable(self):
        # uncontrollable unstable mode never converges
        A = np.array([[2.0, 0.0], [0.0, 0.5]])
        B = np.array([[0.0], [1.0]])
        with pytest.raises((RiccatiDivergence, UnstableClosedLoop)):
            lqr_gain(A, B, np.eye(2), np.eye(1), max_iter=500)


class TestPolytope:
    def test_zero_row_rejected(self):
        with pytest.raises(DimensionMismatch):
            Polytope(np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([1.0, 1.0]))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            Polytope(np.eye(2), np.ones(3))


class TestLoadNetwork:
    def test_example_dimensions(self, triple_model):
        m = triple_model
        assert (m.n, m.m, m.l) == (6, 3, 3)
        assert m.A.shape == (6, 6)
        # coupling blocks placed off the diagonal
        assert m.A[0, 2] == pytest.approx(0.1)
        assert m.A[1, 3] == pytest.approx(0.1)
        assert m.A[1, 2] == pytest.approx(0.1)
        assert m.A[0, 3] == pytest.approx(0.0)

    def test_scalar_accepted(self):
        m = network_from_dict(scalar_model_doc(a=0.5, k=0.0))
        assert spectral_radius(m.A_K) == pytest.approx(0.5)

    def test_double_integrator_zero_gain_rejected(self, triple_doc):
        triple_doc["gain"] = {"K": [[[0.0] * 6]] * 3}
        with pytest.raises(UnstableClosedLoop):
            network_from_dict(triple_doc)

    def test_graph_not_bidirectional(self, triple_doc):
        triple_doc["graph"]["neighbors"]["0"] = [0, 1, 2]
        triple_doc["graph"]["neighbors"]["1"] = [1]
        with pytest.raises(GraphNotBidirectional):
            network_from_dict(triple_doc)

    def test_noise_not_psd(self, triple_doc):
        triple_doc["subsystem"][0]["noise_cov"] = [[-0.01, 0.0], [0.0, 0.004]]
        with pytest.raises(NoiseNotPD):
            network_from_dict(triple_doc)

    def test_unbounded_state_rejected(self, triple_doc):
        for sub in triple_doc["subsystem"]:
            sub["state_constraints"] = {"H": [[0.0, 1.0], [0.0, -1.0]],
                                        "h": [1.0, 1.0]}
        with pytest.raises(UnboundedConstraintSet):
            network_from_dict(triple_doc)

    def test_block_shape_mismatch(self, triple_doc):
        triple_doc["subsystem"][0]["A"]["1"] = [[0.1, 0.0]]
        with pytest.raises(DimensionMismatch):
            network_from_dict(triple_doc)

    def test_probability_bounds(self, triple_doc):
        triple_doc["probability"]["p_x"] = 1.0
        with pytest.raises(Exception):
            network_from_dict(triple_doc)

    def test_missing_gain_requires_complete_graph(self):
        doc = pair_model_doc(coupled=False)
        del doc["gain"]
        with pytest.raises(ModelFileError):
            network_from_dict(doc)


class TestAssembly:
    def test_single_subsystem_global_equals_local(self):
        m = network_from_dict(scalar_model_doc(a=0.3, k=-0.1))
        assert m.A[0, 0] == pytest.approx(0.3)
        assert np.allclose(m.selectors[0], np.eye(1))

    def test_decoupled_pair_block_diagonal(self):
        m = network_from_dict(pair_model_doc(coupled=False))
        assert m.A[0, 1] == 0.0 and m.A[1, 0] == 0.0
        # selector for agent 0 picks only its own state
        assert m.selectors[0].shape == (1, 2)
        assert np.allclose(m.selectors[0], np.array([[1.0, 0.0]]))

    def test_selector_orthonormal_rows(self, triple_model):
        for S in triple_model.selectors:
            assert np.allclose(S @ S.T, np.eye(S.shape[0]))

    def test_local_AK_row_matches_global(self, triple_model):
        m = triple_model
        AK = m.A_K
        for i in range(m.M):
            row = m.local_AK_row(i)
            assert np.allclose(row, AK[m.state_slice(i), :])  # complete graph


class TestRoundTrip:
    def test_serialization_bit_exact(self, triple_model):
        doc = network_to_dict(triple_model)
        blob = json.dumps(doc)
        m2 = network_from_dict(json.loads(blob))
        for name in ("A", "B", "C", "K", "Q", "R", "T", "noise_cov"):
            a = getattr(triple_model, name)
            b = getattr(m2, name)
            assert a.shape == b.shape
            assert np.array_equal(a, b), name
        assert np.array_equal(triple_model.state_set.H, m2.state_set.H)
        assert np.array_equal(triple_model.state_set.h, m2.state_set.h)

    def test_roundtrip_of_loaded_file(self, tmp_path):
        doc = triple_model_doc()
        path = tmp_path / "model.json"
        path.write_text(json.dumps(doc))
        m1 = load_network(path)
        blob = json.dumps(network_to_dict(m1))
        m2 = network_from_dict(json.loads(blob))
        assert np.array_equal(m1.A, m2.A)
        assert np.array_equal(m1.K, m2.K)
