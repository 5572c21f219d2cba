import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qdcluster import qmath
from qdcluster.errors import DimensionError, ParameterError, UnknownSubsystemError
from qdcluster.qmath import (I2, SIGMA_X, SIGMA_Y, SIGMA_Z, DensityMatrix, HilbertSpace,
                             QuantumChannel)

Q1 = HilbertSpace.qubits("a")
Q2 = HilbertSpace.qubits("a", "b")
HADAMARD = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)


def depolarizing():
    return QuantumChannel(Q1, Q1, tuple(0.5 * p for p in qmath.PAULIS))


def projector(psi):
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


class TestHilbertSpace:
    def test_dimension_is_product(self):
        s = HilbertSpace((("spin", 2), ("trion", 2), ("photon", 3)))
        assert s.dim == 12
        assert s.labels == ("spin", "trion", "photon")

    def test_labels_unique(self):
        with pytest.raises(ParameterError):
            HilbertSpace.qubits("a", "a")

    def test_unknown_label(self):
        with pytest.raises(UnknownSubsystemError):
            Q2.index("c")


class TestKron:
    def test_identity(self):
        assert np.array_equal(qmath.kron(I2, I2), np.eye(4))

    def test_diagonal(self):
        assert np.array_equal(qmath.kron(np.diag([1, 2]), np.diag([3, 4])), np.diag([3, 4, 6, 8]))

    def test_sigma_x_sigma_z_on_00(self):
        out = qmath.kron(SIGMA_X, SIGMA_Z) @ np.array([1, 0, 0, 0])
        assert np.array_equal(out, [0, 0, 1, 0])


class TestDensityMatrix:
    def test_rejects_non_hermitian(self):
        with pytest.raises(ParameterError):
            DensityMatrix(Q1, [[0.5, 0.1], [0.2, 0.5]])

    def test_rejects_negative_eigenvalue(self):
        with pytest.raises(ParameterError):
            DensityMatrix(Q1, [[1.1, 0], [0, -0.1]])

    def test_trace_rules(self):
        with pytest.raises(ParameterError):
            DensityMatrix(Q1, np.eye(2) * 0.4)
        sub = DensityMatrix(Q1, np.eye(2) * 0.4, normalized=False)
        assert sub.renormalized().trace == pytest.approx(1.0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            DensityMatrix(Q2, np.eye(2) / 2)

    def test_immutable(self):
        rho = DensityMatrix(Q1, np.eye(2) / 2)
        with pytest.raises(ValueError):
            rho.matrix[0, 0] = 1


class TestPartialTrace:
    def test_bell_marginal(self):
        bell = np.array([1, 0, 0, 1]) / math.sqrt(2)
        red = qmath.partial_trace(DensityMatrix(Q2, projector(bell)), ["a"])
        assert np.allclose(red.matrix, np.eye(2) / 2, atol=1e-12)

    def test_trace_everything(self, rng):
        rho = DensityMatrix(Q2, qmath.random_density_matrix(4, rng))
        out = qmath.partial_trace(rho, [])
        assert out.matrix.shape == (1, 1)
        assert out.matrix[0, 0] == pytest.approx(1.0)

    def test_keeps_second_factor(self, rng):
        a, b = qmath.random_density_matrix(2, rng), qmath.random_density_matrix(3, rng)
        space = HilbertSpace((("a", 2), ("b", 3)))
        red = qmath.partial_trace(DensityMatrix(space, np.kron(a, b)), ["b"])
        assert np.allclose(red.matrix, b, atol=1e-12)

    def test_unknown_label(self):
        with pytest.raises(UnknownSubsystemError):
            qmath.partial_trace(DensityMatrix(Q2, np.eye(4) / 4), ["z"])

    @given(seeds)
    def test_product_state(self, seed):
        rng = np.random.default_rng(seed)
        a, b = qmath.random_density_matrix(2, rng), qmath.random_density_matrix(4, rng)
        b_sub = 0.6 * b
        space = HilbertSpace((("a", 2), ("b", 4)))
        red = qmath.partial_trace(DensityMatrix(space, np.kron(a, b_sub), normalized=False), ["a"])
        assert np.allclose(red.matrix, a * np.trace(b_sub), atol=1e-10)


class TestMatrixExp:
    def test_zero(self):
        assert np.allclose(qmath.matrix_exp(np.zeros((3, 3)), 2.5j), np.eye(3))

    def test_pi_rotation(self):
        assert np.allclose(qmath.matrix_exp(SIGMA_X, -1j * math.pi / 2), -1j * SIGMA_X, atol=1e-12)

    def test_diagonal(self):
        assert np.allclose(qmath.matrix_exp(np.diag([1.0, 2.0]), 1), np.diag([math.e, math.e ** 2]))

    def test_non_square(self):
        with pytest.raises(DimensionError):
            qmath.matrix_exp(np.zeros((2, 3)))

    @given(seeds, st.floats(min_value=-5, max_value=5))
    def test_unitary_for_hermitian(self, seed, t):
        rng = np.random.default_rng(seed)
        g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        u = qmath.matrix_exp(g + g.conj().T, -1j * t)
        assert np.allclose(u.conj().T @ u, np.eye(4), atol=1e-9)


class TestChannel:
    def test_kraus_completeness_checked(self):
        with pytest.raises(ParameterError):
            QuantumChannel(Q1, Q1, (0.5 * I2,))
        ch = QuantumChannel(Q1, Q1, (0.5 * I2,), trace_preserving=False)
        assert np.allclose(ch.apply(np.eye(2) / 2), np.eye(2) / 8)

    def test_trace_increasing_rejected(self):
        with pytest.raises(ParameterError):
            QuantumChannel(Q1, Q1, (1.5 * I2,), trace_preserving=False)

    def test_shape_checked(self):
        with pytest.raises(DimensionError):
            QuantumChannel(Q1, Q2, (I2,))

    def test_then_composes_in_order(self):
        x = qmath.unitary_channel(Q1, SIGMA_X)
        h = qmath.unitary_channel(Q1, HADAMARD)
        rho = projector([1, 0])
        assert np.allclose(x.then(h).apply(rho), h.apply(x.apply(rho)))

    def test_superoperator_matches_apply(self, rng):
        ch = QuantumChannel(Q1, Q1, tuple(qmath.random_kraus(2, 2, 3, rng)))
        rho = qmath.random_density_matrix(2, rng)
        assert np.allclose((ch.superoperator() @ rho.reshape(-1)).reshape(2, 2), ch.apply(rho))


class TestPTM:
    def test_identity(self):
        assert np.allclose(qmath.channel_to_ptm(qmath.unitary_channel(Q1, I2)).matrix, np.eye(4))

    def test_depolarizing(self):
        assert np.allclose(qmath.channel_to_ptm(depolarizing()).matrix, np.diag([1, 0, 0, 0]), atol=1e-12)

    def test_hadamard(self):
        r = qmath.ptm_of_unitary(HADAMARD).matrix
        # direct tr(P_i H P_j H)/2 by hand: I->I, X<->Z, Y->-Y
        expected = np.array([[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0], [0, 1, 0, 0]])
        assert np.allclose(r, expected, atol=1e-12)

    def test_labels(self):
        assert qmath.PauliTransferMatrix(2, np.eye(16)).labels[:5] == ["II", "IX", "IY", "IZ", "XI"]

    def test_register_growing_channel_needs_embedding(self):
        ch = QuantumChannel(Q1, Q2, (np.kron(I2, np.array([[1], [0]])),))
        with pytest.raises(DimensionError):
            qmath.channel_to_ptm(ch)
        emb = qmath.embed_fresh_register(ch, HilbertSpace.qubits("slot"))
        assert np.allclose(qmath.channel_to_ptm(emb).matrix[0], np.eye(16)[0], atol=1e-12)

    @given(seeds, st.integers(min_value=1, max_value=4))
    def test_random_channel_ptm_and_choi(self, seed, n_ops):
        rng = np.random.default_rng(seed)
        ch = QuantumChannel(Q2, Q2, tuple(qmath.random_kraus(4, 4, n_ops, rng)))
        r = qmath.channel_to_ptm(ch).matrix
        assert np.allclose(r[0], np.eye(16)[0], atol=1e-9)
        assert np.all(np.abs(r) <= 1 + 1e-9)
        assert qmath.is_psd(qmath.channel_to_choi(ch))

    @given(seeds)
    def test_ptm_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        ch = QuantumChannel(Q2, Q2, tuple(qmath.random_kraus(4, 4, 3, rng)))
        rho = qmath.random_density_matrix(4, rng)
        via_ptm = qmath.from_pauli_vector(qmath.channel_to_ptm(ch).apply_to_vector(qmath.pauli_vector(rho)))
        assert np.allclose(via_ptm, ch.apply(rho), atol=1e-9)


class TestChoi:
    def test_identity(self):
        c = qmath.channel_to_choi(qmath.unitary_channel(Q1, I2))
        omega = np.array([1, 0, 0, 1])
        assert np.allclose(c, np.outer(omega, omega))
        assert np.linalg.matrix_rank(c) == 1
        assert np.trace(c).real == pytest.approx(2.0)

    def test_depolarizing(self):
        assert np.allclose(qmath.channel_to_choi(depolarizing()), np.eye(4) / 2)

    def test_kraus_round_trip(self, rng):
        ch = QuantumChannel(Q1, Q2, tuple(qmath.random_kraus(2, 4, 2, rng)))
        back = QuantumChannel(Q1, Q2, tuple(qmath.choi_to_kraus(qmath.channel_to_choi(ch), 2, 4)))
        rho = qmath.random_density_matrix(2, rng)
        assert np.allclose(back.apply(rho), ch.apply(rho), atol=1e-10)


class TestFidelity:
    def test_pure(self):
        psi = np.array([0.6, 0.8j])
        assert qmath.state_fidelity(projector(psi), psi) == pytest.approx(1.0)

    @given(st.floats(0, 2 * math.pi), st.floats(0, math.pi))
    def test_maximally_mixed(self, phi, theta):
        psi = np.array([math.cos(theta / 2), np.exp(1j * phi) * math.sin(theta / 2)])
        assert qmath.state_fidelity(np.eye(2) / 2, psi) == pytest.approx(0.5)

    def test_zero_against_plus(self):
        plus = np.array([1, 1]) / math.sqrt(2)
        assert qmath.state_fidelity(DensityMatrix(Q1, projector([1, 0])), plus) == pytest.approx(0.5)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            qmath.state_fidelity(np.eye(4) / 4, np.array([1, 0]))

    @given(seeds, st.floats(0, 1))
    def test_linear_in_rho(self, seed, alpha):
        rng = np.random.default_rng(seed)
        r1, r2 = qmath.random_density_matrix(4, rng), qmath.random_density_matrix(4, rng)
        psi = rng.normal(size=4) + 1j * rng.normal(size=4)
        psi /= np.linalg.norm(psi)
        mix = qmath.state_fidelity(alpha * r1 + (1 - alpha) * r2, psi)
        lin = alpha * qmath.state_fidelity(r1, psi) + (1 - alpha) * qmath.state_fidelity(r2, psi)
        assert mix == pytest.approx(lin, abs=1e-10)


def test_pauli_basis_orthogonal():
    basis = qmath.pauli_basis(2)
    gram = np.array([[np.vdot(a, b) for b in basis] for a in basis])
    assert np.allclose(gram, 4 * np.eye(16))
    assert np.allclose(qmath.pauli_basis(1)[2], SIGMA_Y)
