import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qgcn.encoding import (
    EncodedRegisterPlan,
    UnencodableInputError,
    amplitude_encode,
    encode_graph_input,
    register_size,
)
from qgcn.statevector import expectation_z, tensor_product

vectors = arrays(float, st.integers(2, 20), elements=st.floats(-10, 10))


class TestAmplitudeEncode:
    def test_unit_vector(self):
        s = amplitude_encode([1, 0])
        assert s.n_qubits == 1
        np.testing.assert_array_equal(s.amplitudes, [1, 0])

    def test_three_vector_is_unit_norm(self):
        s = amplitude_encode([0.1, -0.6, 1.0])
        np.testing.assert_allclose(s.amplitudes.real, [0.0854, -0.5126, 0.8543, 0.0], atol=1e-3)
        assert s.norm() == pytest.approx(1.0, abs=1e-12)

    def test_printed_vector_is_not_normalized(self):
        # The source text divides by the squared norm; its vector sums to ~0.730, not 1.
        printed = np.array([0.073, -0.438, 0.730, 0.000])
        assert np.sum(printed**2) == pytest.approx(0.730, abs=2e-3)
        assert abs(np.sum(printed**2) - 1) > 0.2

    def test_three_four(self):
        np.testing.assert_allclose(amplitude_encode([3, 4]).amplitudes, [0.6, 0.8])

    @pytest.mark.parametrize("x", [[0, 0], [0.0] * 16, [np.nan, 1.0]])
    def test_unencodable(self, x):
        with pytest.raises(UnencodableInputError):
            amplitude_encode(x)

    @given(vectors)
    @settings(max_examples=100, deadline=None)
    def test_norm_and_ratios(self, x):
        assume(np.linalg.norm(x) > 1e-6)
        s = amplitude_encode(x)
        assert s.norm() == pytest.approx(1.0, abs=1e-12)
        assert len(s.amplitudes) == 2 ** register_size(len(x))
        np.testing.assert_allclose(s.amplitudes[: len(x)].real * np.linalg.norm(x), x, atol=1e-9)
        np.testing.assert_array_equal(s.amplitudes[len(x) :], 0)

    @given(vectors)
    @settings(max_examples=50, deadline=None)
    def test_sign_preservation(self, x):
        assume(np.linalg.norm(x) > 1e-6)
        np.testing.assert_array_equal(amplitude_encode(-x).amplitudes, -amplitude_encode(x).amplitudes)

    def test_slack_keeps_scale(self):
        small, big = amplitude_encode([1, 1, 1], slack=1.0), amplitude_encode([5, 5, 5], slack=1.0)
        assert small.norm() == pytest.approx(1.0) and big.norm() == pytest.approx(1.0)
        assert abs(small.amplitudes[0]) < abs(big.amplitudes[0])

    @pytest.mark.parametrize("dim, qubits", [(2, 1), (3, 2), (4, 2), (5, 3), (16, 4), (17, 5)])
    def test_register_size(self, dim, qubits):
        assert register_size(dim) == qubits


class TestPlan:
    def test_layout_tiles_qubits(self):
        plan = EncodedRegisterPlan.build(3, 4, [(0, 1), (0, 2), (1, 2)])
        assert plan.total_qubits == 15
        assert [list(r) for r in plan.node_registers] == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9, 10, 11]]
        assert [q for _, q in plan.edge_qubits] == [12, 13, 14]
        assert plan.edge_qubit(2, 0) == 13

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            EncodedRegisterPlan((range(0, 2), range(1, 3)))

    def test_unknown_pair(self):
        with pytest.raises(KeyError):
            EncodedRegisterPlan.build(2, 1, [(0, 1)]).edge_qubit(0, 2)


class TestGraphInput:
    def test_single_node_basis(self):
        feats = np.zeros((1, 16))
        feats[0, 0] = 1
        s = encode_graph_input(feats, EncodedRegisterPlan.build(1, 4))
        np.testing.assert_array_equal(s.amplitudes, np.eye(16)[0])

    def test_edge_qubit_set(self):
        rng = np.random.default_rng(0)
        plan = EncodedRegisterPlan.build(2, 4, [(0, 1)])
        s = encode_graph_input(rng.uniform(0.1, 1, (2, 16)), plan, [(0, 1)])
        assert s.n_qubits == 9
        assert expectation_z(s, 8) == pytest.approx(-1.0)

    def test_missing_edge_register(self):
        # pairs in patch ids (0,2),(0,3),(2,3) are node pairs (0,1),(0,2),(1,2)
        rng = np.random.default_rng(1)
        plan = EncodedRegisterPlan.build(3, 4, [(0, 1), (0, 2), (1, 2)])
        s = encode_graph_input(rng.uniform(0.1, 1, (3, 16)), plan, [(1, 2), (0, 2)])
        assert [round(float(expectation_z(s, q))) for q in (12, 13, 14)] == [1, -1, -1]
        edge_marginal = np.sum(np.abs(s.amplitudes.reshape(8, 4096)) ** 2, axis=1)
        assert edge_marginal[0b110] == pytest.approx(1.0)

    def test_no_edges_is_bare_tensor_product(self):
        rng = np.random.default_rng(2)
        feats = rng.uniform(0.1, 1, (3, 4))
        s = encode_graph_input(feats, EncodedRegisterPlan.build(3, 2))
        a, b, c = (amplitude_encode(f) for f in feats)
        np.testing.assert_allclose(s.amplitudes, tensor_product(c, tensor_product(b, a)).amplitudes, atol=1e-15)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(3)
        plan = EncodedRegisterPlan.build(2, 2, [(0, 1)])
        feats = rng.uniform(0.1, 1, (4, 2, 4))
        batch = encode_graph_input(feats, plan, [(0, 1)])
        for i in range(4):
            np.testing.assert_allclose(batch.amplitudes[:, i], encode_graph_input(feats[i], plan, [(0, 1)]).amplitudes)

    def test_edge_outside_universe(self):
        plan = EncodedRegisterPlan.build(3, 2, [(0, 1)])
        with pytest.raises(ValueError, match="pair universe"):
            encode_graph_input(np.ones((3, 4)), plan, [(1, 2)])

    def test_zero_node_vector(self):
        feats = np.ones((2, 4))
        feats[1] = 0
        with pytest.raises(UnencodableInputError):
            encode_graph_input(feats, EncodedRegisterPlan.build(2, 2))

    def test_register_size_mismatch(self):
        with pytest.raises(ValueError):
            encode_graph_input(np.ones((2, 4)), EncodedRegisterPlan.build(2, 3))
