import itertools

import numpy as np
import pytest

from conftest import random_mixed, random_pure
from nnfidelity.errors import DimensionMismatch, ZeroTotal
from nnfidelity.measurement import (
    CountVector,
    MeasurementSetting,
    OutcomeDistribution,
    expectations_from_outcomes,
    outcome_probabilities,
    outcome_probabilities_batch,
    sample_counts_poisson,
    subset_expectations,
)
from nnfidelity.quantum import DensityMatrix, named_state, pauli_expectation
from nnfidelity.rng import RngStream

_EIG = {
    "X": [np.array([1, 1]) / np.sqrt(2), np.array([1, -1]) / np.sqrt(2)],
    "Y": [np.array([1, 1j]) / np.sqrt(2), np.array([1, -1j]) / np.sqrt(2)],
    "Z": [np.array([1, 0]), np.array([0, 1])],
}


def projector_oracle(rho, letters):
    """p_j = tr(rho |e_j><e_j|) with the product eigenbasis built explicitly."""
    n = len(letters)
    out = np.empty(1 << n)
    for j in range(1 << n):
        vec = np.ones(1, dtype=complex)
        for q, c in enumerate(letters):
            vec = np.kron(vec, _EIG[c][(j >> (n - 1 - q)) & 1])
        out[j] = np.vdot(vec, rho @ vec).real
    return out


class TestSetting:
    def test_rejects_identity(self):
        with pytest.raises(ValueError):
            MeasurementSetting("XI")

    def test_sub_pauli(self):
        s = MeasurementSetting("XYZ")
        assert str(s.sub_pauli(0b101)) == "XIZ"
        assert str(s.sub_pauli(0b111)) == "XYZ"


class TestOutcomeProbabilities:
    def test_zero_state_z(self):
        p = outcome_probabilities(named_state("Basis0", 3), "ZZZ").p
        assert p[0] == pytest.approx(1.0) and p[1:].sum() == pytest.approx(0.0)

    def test_bell_xx(self):
        p = outcome_probabilities(named_state("Bell"), "XX").p
        np.testing.assert_allclose(p, [0.5, 0, 0, 0.5], atol=1e-12)

    def test_projector_oracle(self, rng):
        rho = random_mixed(3, rng)
        for letters in ("XYZ", "YYX", "ZXY"):
            p = outcome_probabilities(rho, letters).p
            np.testing.assert_allclose(p, projector_oracle(rho.mat, letters), atol=1e-10)

    def test_batch_agrees(self, rng):
        states = [random_mixed(2, rng) for _ in range(4)]
        batch = outcome_probabilities_batch(np.stack([s.mat for s in states]), "XY")
        for s, row in zip(states, batch):
            np.testing.assert_allclose(row, outcome_probabilities(s, "XY").p, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            outcome_probabilities(named_state("Bell"), "XYZ")

    def test_distribution_validation(self):
        with pytest.raises(ValueError):
            OutcomeDistribution(MeasurementSetting("X"), [0.7, 0.7])


class TestPoisson:
    def test_zero_probability_never_clicks(self):
        dist = OutcomeDistribution(MeasurementSetting("ZZ"), [1.0, 0, 0, 0])
        for seed in range(20):
            assert sample_counts_poisson(dist, 100, seed).counts[1:].sum() == 0

    def test_concentration(self):
        dist = OutcomeDistribution(MeasurementSetting("Z"), [0.5, 0.5])
        ok = sum(np.all(np.abs(sample_counts_poisson(dist, 10**6, s).frequencies - 0.5) < 0.005) for s in range(100))
        assert ok >= 99

    def test_deterministic(self):
        dist = outcome_probabilities(named_state("GHZ", 3), "XXX")
        a = sample_counts_poisson(dist, 1000, RngStream(4))
        b = sample_counts_poisson(dist, 1000, RngStream(4))
        assert np.array_equal(a.counts, b.counts)

    def test_zero_total(self):
        with pytest.raises(ZeroTotal):
            CountVector(MeasurementSetting("Z"), np.zeros(2, dtype=int)).frequencies
        dist = OutcomeDistribution(MeasurementSetting("Z"), [0.5, 0.5])
        with pytest.raises(ZeroTotal):
            sample_counts_poisson(dist, 1, _NoClicks())


class _NoClicks(RngStream):
    def __init__(self):
        super().__init__(0)

    def poisson(self, lam, size=None):
        return np.zeros_like(np.asarray(lam), dtype=np.int64)


class TestMarginals:
    def test_bell_xx(self):
        ex = expectations_from_outcomes(outcome_probabilities(named_state("Bell"), "XX"))
        assert {str(k): round(v, 12) for k, v in ex.items()} == {"XX": 1.0, "XI": 0.0, "IX": 0.0}

    @pytest.mark.parametrize("seed", range(5))
    def test_every_sub_pauli(self, seed):
        rho = random_mixed(3, np.random.default_rng(seed))
        for letters in itertools.product("XYZ", repeat=3):
            ex = expectations_from_outcomes(outcome_probabilities(rho, "".join(letters)))
            for p, v in ex.items():
                assert v == pytest.approx(pauli_expectation(rho, p), abs=1e-10)

    def test_maximally_mixed(self):
        ex = expectations_from_outcomes(outcome_probabilities(DensityMatrix.maximally_mixed(3), "XYZ"))
        assert all(abs(v) < 1e-12 for v in ex.values())

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_fast_transform_equals_naive_sum(self, n, rng):
        counts = rng.integers(0, 50, size=1 << n).astype(float)
        naive = [sum((-1) ** bin(j & m).count("1") * counts[j] for j in range(1 << n)) for m in range(1 << n)]
        assert subset_expectations(counts).tolist() == naive

    def test_pure_state_marginals(self, rng):
        psi = random_pure(2, rng)
        ex = expectations_from_outcomes(outcome_probabilities(psi, "YX"))
        assert ex[next(k for k in ex if str(k) == "YX")] == pytest.approx(pauli_expectation(psi, "YX"), abs=1e-12)
