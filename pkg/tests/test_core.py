import numpy as np
import pytest

from collapse_lab.core import (
    DensityMatrix,
    DimensionError,
    SubsystemSplit,
    Tolerances,
    ValidationError,
    coherence_norm,
    damp_coherence,
    partial_trace,
    tensor_product,
)


def random_density(rng, dim):
    """Random mixed state from a Wishart-style construction."""
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    m = g @ g.conj().T
    return DensityMatrix(m / np.trace(m))


def entangled_pair(c1, c2):
    """Pure state c1 |A1>|1> + c2 |A2>|2> with orthonormal apparatus states."""
    v = np.zeros(4, dtype=complex)
    v[0] = c1  # |A1>|1> -> composite index (0, 0)
    v[3] = c2  # |A2>|2> -> composite index (1, 1)
    return DensityMatrix.pure(v)


class TestDensityMatrix:
    def test_rejects_non_hermitian(self):
        with pytest.raises(ValidationError):
            DensityMatrix([[0.5, 0.2], [0.3, 0.5]])

    def test_rejects_bad_trace(self):
        with pytest.raises(ValidationError):
            DensityMatrix(np.eye(2))

    def test_rejects_negative_eigenvalue(self):
        with pytest.raises(ValidationError):
            DensityMatrix([[1.0, 0.0], [0.0, -1e-6]] / np.array(1.0 - 1e-6))

    def test_rejects_nan(self):
        with pytest.raises(ValidationError):
            DensityMatrix([[np.nan, 0.0], [0.0, 1.0]])

    def test_entries_read_only(self):
        rho = DensityMatrix.maximally_mixed(2)
        with pytest.raises(ValueError):
            rho.entries[0, 0] = 0.3


class TestTensorProduct:
    def test_maximally_mixed_product(self):
        a = DensityMatrix.maximally_mixed(2)
        out = tensor_product(a, a)
        np.testing.assert_allclose(out.entries, np.eye(4) / 4)

    def test_pure_product_state(self):
        m = DensityMatrix.pure([0, 1])
        app = DensityMatrix.pure([1, 0])
        out = tensor_product(m, app)
        v = np.kron([0, 1], [1, 0])
        np.testing.assert_allclose(out.entries, np.outer(v, v))

    def test_diagonal_hand_product(self):
        a = DensityMatrix(np.diag([0.3, 0.7]))
        b = DensityMatrix(np.diag([0.5, 0.5]))
        out = tensor_product(a, b)
        np.testing.assert_allclose(np.diag(out.entries).real, [0.15, 0.15, 0.35, 0.35])

    def test_dimension_cap(self):
        tol = Tolerances(max_dim=8)
        a = DensityMatrix(np.eye(4) / 4, tol=tol)
        with pytest.raises(DimensionError):
            tensor_product(a, a)

    def test_partial_trace_recovers_factors(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = random_density(rng, 2)
            b = random_density(rng, 3)
            ab = tensor_product(a, b)
            back_a = partial_trace(ab, SubsystemSplit((2, 3), 0))
            back_b = partial_trace(ab, SubsystemSplit((2, 3), 1))
            assert np.max(np.abs(back_a.entries - a.entries)) < 1e-12
            assert np.max(np.abs(back_b.entries - b.entries)) < 1e-12


class TestPartialTrace:
    def test_entangled_state_reduces_to_weights(self):
        c1, c2 = 0.6, 0.8j
        rho = entangled_pair(c1, c2)
        reduced = partial_trace(rho, SubsystemSplit((2, 2), 1))
        np.testing.assert_allclose(reduced.entries, np.diag([0.36, 0.64]), atol=1e-12)

    def test_identity_symmetry(self):
        rho = DensityMatrix.maximally_mixed(4)
        out = partial_trace(rho, SubsystemSplit((2, 2), 0))
        np.testing.assert_allclose(out.entries, np.eye(2) / 2)

    def test_inconsistent_split_rejected(self):
        rho = DensityMatrix.maximally_mixed(4)
        with pytest.raises(DimensionError):
            partial_trace(rho, SubsystemSplit((3, 2), 0))

    def test_linear_and_trace_preserving(self):
        rng = np.random.default_rng(11)
        split = SubsystemSplit((2, 2), 0)
        for _ in range(20):
            a = random_density(rng, 4)
            b = random_density(rng, 4)
            w = rng.uniform(0.1, 0.9)
            mix = DensityMatrix(w * a.entries + (1 - w) * b.entries)
            lhs = partial_trace(mix, split).entries
            rhs = w * partial_trace(a, split).entries + (1 - w) * partial_trace(b, split).entries
            assert np.max(np.abs(lhs - rhs)) < 1e-12
            assert abs(np.trace(lhs) - 1.0) < 1e-12

    def test_three_factor_trace(self):
        rng = np.random.default_rng(13)
        a, b, c = (random_density(rng, d) for d in (2, 2, 3))
        abc = tensor_product(tensor_product(a, b), c)
        mid = partial_trace(abc, SubsystemSplit((2, 2, 3), 1))
        assert np.max(np.abs(mid.entries - b.entries)) < 1e-12

    def test_outputs_stay_valid_on_random_inputs(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            rho = random_density(rng, 6)
            out = partial_trace(rho, SubsystemSplit((2, 3), int(rng.integers(2))))
            assert out.eigenvalues()[0] > -1e-10


class TestCoherenceNorm:
    def test_block_diagonal_is_zero(self):
        rho = DensityMatrix(np.diag([0.25, 0.25, 0.25, 0.25]))
        assert coherence_norm(rho, SubsystemSplit((2, 2), 1)) == 0.0

    def test_equal_superposition_value(self):
        rho = entangled_pair(1 / np.sqrt(2), 1 / np.sqrt(2))
        val = coherence_norm(rho, SubsystemSplit((2, 2), 1))
        assert abs(val - 0.5) < 1e-12

    def test_exponential_damping_scales_norm(self):
        # uniform off-diagonal damping by exp(-rate * t) scales the norm by
        # the same factor
        rho = entangled_pair(1 / np.sqrt(2), 1 / np.sqrt(2))
        split = SubsystemSplit((2, 2), 1)
        base = coherence_norm(rho, split)
        rate, t = 3.0, 0.7
        factor = np.exp(-rate * t)
        damped = damp_coherence(rho, split, factor)
        assert abs(coherence_norm(damped, split) - base * factor) < 1e-12

    def test_invariant_under_channel_diagonal_unitary(self):
        rng = np.random.default_rng(23)
        rho = entangled_pair(0.6, 0.8)
        split = SubsystemSplit((2, 2), 0)  # channel on the slow factor
        base = coherence_norm(rho, split)
        # block-diagonal unitary in the channel index
        u1 = np.linalg.qr(rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))[0]
        u2 = np.linalg.qr(rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))[0]
        u = np.zeros((4, 4), dtype=complex)
        u[:2, :2] = u1
        u[2:, 2:] = u2
        rotated = DensityMatrix(u @ rho.entries @ u.conj().T)
        assert abs(coherence_norm(rotated, split) - base) < 1e-12

    def test_damping_factor_domain(self):
        rho = DensityMatrix.maximally_mixed(4)
        with pytest.raises(ValidationError):
            damp_coherence(rho, SubsystemSplit((2, 2), 0), 1.5)
