import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dense_expectation, random_mixed, random_pure
from nnfidelity.errors import DimensionMismatch, LengthMismatch, NonPSDInput, UnsupportedState
from nnfidelity.quantum import (
    DensityMatrix,
    PauliString,
    StateVector,
    Unitary,
    all_pauli_expectations,
    fidelity_general,
    fidelity_pauli_space,
    fidelity_to_pure,
    householder_target_unitary,
    named_state,
    pauli_expectation,
    transport,
    walsh_hadamard,
)


class TestTypes:
    def test_state_vector_rejects_bad_norm(self):
        with pytest.raises(ValueError):
            StateVector(np.array([1.0, 1.0]))

    def test_state_vector_rejects_non_power_of_two(self):
        with pytest.raises(DimensionMismatch):
            StateVector(np.ones(3) / math.sqrt(3))

    def test_amplitudes_are_read_only(self):
        s = named_state("Bell")
        with pytest.raises(ValueError):
            s.amp[0] = 0

    def test_density_checks(self):
        with pytest.raises(NonPSDInput):
            DensityMatrix(np.diag([1.5, -0.5]))
        with pytest.raises(ValueError):
            DensityMatrix(np.diag([0.7, 0.7]))
        assert DensityMatrix.maximally_mixed(2).n == 2

    def test_unitary_check(self):
        with pytest.raises(ValueError):
            Unitary(np.array([[1, 1], [0, 1]]))

    @pytest.mark.parametrize("letters,index", [("I", 0), ("X", 1), ("Y", 2), ("Z", 3), ("XI", 4), ("ZZ", 15)])
    def test_pauli_index(self, letters, index):
        p = PauliString(letters)
        assert p.index == index
        assert PauliString.from_index(index, len(letters)) == p

    def test_pauli_weight(self):
        assert PauliString("XIZY").weight == 3


class TestPauliExpectation:
    def test_bell_values(self):
        b = named_state("Bell")
        assert pauli_expectation(b, "XX") == pytest.approx(1.0, abs=1e-12)
        assert pauli_expectation(b, "YY") == pytest.approx(-1.0, abs=1e-12)
        assert pauli_expectation(b, "ZZ") == pytest.approx(1.0, abs=1e-12)
        assert pauli_expectation(b, "XZ") == pytest.approx(0.0, abs=1e-12)

    def test_identity_is_trace(self, rng):
        assert pauli_expectation(random_mixed(3, rng), "III") == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_matches_dense_oracle(self, n, rng):
        for state in (random_pure(n, rng), random_mixed(n, rng)):
            for letters in itertools.product("IXYZ", repeat=n):
                p = PauliString("".join(letters))
                assert pauli_expectation(state, p) == pytest.approx(dense_expectation(state, p), abs=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_all_expectations_match_single(self, n, rng):
        state = random_mixed(n, rng)
        allv = all_pauli_expectations(state)
        for i in range(4**n):
            assert allv[i] == pytest.approx(pauli_expectation(state, PauliString.from_index(i, n)), abs=1e-12)

    def test_pure_state_norm_identity(self, rng):
        a = all_pauli_expectations(random_pure(3, rng))
        assert np.sum(a**2) == pytest.approx(8.0, abs=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            pauli_expectation(named_state("Bell"), "XXX")


class TestWalshHadamard:
    def test_matches_definition(self, rng):
        v = rng.normal(size=8)
        naive = [sum((-1) ** bin(j & z).count("1") * v[j] for j in range(8)) for z in range(8)]
        np.testing.assert_allclose(walsh_hadamard(v), naive, atol=1e-12)

    def test_involution_up_to_scale(self, rng):
        v = rng.normal(size=(3, 16))
        np.testing.assert_allclose(walsh_hadamard(walsh_hadamard(v)) / 16, v, atol=1e-12)


class TestFidelity:
    def test_identical_states(self, rng):
        s = random_pure(3, rng)
        assert fidelity_to_pure(s, s) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_states(self):
        zero = named_state("Basis0", 2)
        one = StateVector(np.array([0, 1, 0, 0]))
        assert fidelity_to_pure(zero, one) == 0.0

    def test_maximally_mixed(self):
        b = named_state("Bell")
        assert fidelity_to_pure(b, DensityMatrix.maximally_mixed(2)) == pytest.approx(0.5, abs=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_general_agrees_with_pure_formula(self, n, rng):
        t = random_pure(n, rng)
        rho = random_mixed(n, rng)
        assert fidelity_general(t, rho) == pytest.approx(fidelity_to_pure(t, rho), abs=1e-9)

    def test_general_mixed_pair_against_scipy_sqrtm(self, rng):
        from scipy.linalg import sqrtm

        a, b = random_mixed(2, rng), random_mixed(2, rng)
        sa = sqrtm(a.mat)
        ref = np.trace(sqrtm(sa @ b.mat @ sa)).real
        assert fidelity_general(a, b) == pytest.approx(ref, abs=1e-9)

    def test_general_is_symmetric(self, rng):
        a, b = random_mixed(2, rng), random_mixed(2, rng)
        assert fidelity_general(a, b) == pytest.approx(fidelity_general(b, a), abs=1e-9)

    def test_pauli_space_agrees(self, rng):
        t = random_pure(3, rng)
        rho = random_mixed(3, rng)
        a, beta = all_pauli_expectations(t), all_pauli_expectations(rho)
        assert fidelity_pauli_space(a, beta) == pytest.approx(fidelity_to_pure(t, rho), abs=1e-10)

    def test_pauli_space_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            fidelity_pauli_space(np.ones(4), np.ones(16))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            fidelity_to_pure(named_state("Bell"), named_state("GHZ", 3))


class TestHouseholder:
    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_first_column_is_target(self, n, rng):
        t = random_pure(n, rng)
        U = householder_target_unitary(t)
        np.testing.assert_allclose(U.mat[:, 0], t.amp, atol=1e-12)
        np.testing.assert_allclose(U.mat.conj().T @ U.mat, np.eye(1 << n), atol=1e-12)

    def test_basis_target_is_identity(self):
        U = householder_target_unitary(named_state("Basis0", 2))
        np.testing.assert_allclose(U.mat, np.eye(4), atol=1e-15)

    def test_transport_preserves_fidelity(self, rng):
        t = random_pure(2, rng)
        zero = named_state("Basis0", 2)
        rho = random_mixed(2, rng)
        moved = transport(householder_target_unitary(t), rho)
        assert fidelity_to_pure(t, moved) == pytest.approx(fidelity_to_pure(zero, rho), abs=1e-12)

    def test_deterministic(self, rng):
        t = random_pure(3, rng)
        assert np.array_equal(householder_target_unitary(t).mat, householder_target_unitary(t).mat)


class TestNamedStates:
    @pytest.mark.parametrize("kind,n", [("Bell", 2), ("W", 2), ("W", 3), ("GHZ", 3), ("GHZ", 6), ("Dicke", 4),
                                        ("Cluster", 4), ("Cluster", 5), ("CRing", 5), ("C23", 6), ("Basis0", 1)])
    def test_normalised(self, kind, n):
        s = named_state(kind, n)
        assert s.n == n
        assert np.vdot(s.amp, s.amp).real == pytest.approx(1.0, abs=1e-12)

    def test_case_insensitive(self):
        assert np.array_equal(named_state("ghz", 3).amp, named_state("GHZ", 3).amp)

    def test_ghz_stabilisers(self):
        g = named_state("GHZ", 3)
        assert pauli_expectation(g, "XXX") == pytest.approx(1.0)
        assert pauli_expectation(g, "ZZI") == pytest.approx(1.0)

    def test_cluster4_stabiliser(self):
        c = named_state("Cluster", 4)
        assert pauli_expectation(c, "ZZII") == pytest.approx(1.0, abs=1e-12)
        assert pauli_expectation(c, "XXZZ") == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("kind,n", [("Bell", 3), ("Nope", 2), ("GHZ", 1), ("Dicke", None)])
    def test_unsupported(self, kind, n):
        with pytest.raises(UnsupportedState):
            named_state(kind, n)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_expectations_bounded_and_real(n, seed):
    rho = random_mixed(n, np.random.default_rng(seed))
    vals = all_pauli_expectations(rho)
    assert vals[0] == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.abs(vals) <= 1 + 1e-12)
