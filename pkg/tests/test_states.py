import numpy as np
import pytest
from scipy import stats

from conftest import random_mixed
from nnfidelity.errors import TooFewStates
from nnfidelity.quantum import (
    DensityMatrix,
    StateVector,
    Unitary,
    fidelity_to_pure,
    householder_target_unitary,
    named_state,
)
from nnfidelity.rng import RngStream
from nnfidelity.states import (
    M1_DISTRIBUTIONS,
    GeneratorSpec,
    _solve_overlaps,
    column_weights,
    gen_mixed_with_fidelity,
    gen_pure_with_fidelity,
    generate,
    purity,
    purity_report,
    random_ket,
    random_simplex,
    transport_state,
    uniformity_report,
)


class TestRandomSimplex:
    def test_single_coordinate(self):
        assert random_simplex(1, RngStream(0)).tolist() == [1.0]

    def test_valid_point(self):
        p = random_simplex(4, RngStream(3))
        assert p.sum() == pytest.approx(1.0, abs=1e-15)
        assert np.all(p >= 0)

    def test_symmetric_means(self):
        pts = random_simplex(3, RngStream(1), count=100_000)
        np.testing.assert_allclose(pts.mean(axis=0), 1 / 3, atol=0.01)


class TestRandomKet:
    def test_one_dimensional(self):
        assert random_ket(1, RngStream(0)).tolist() == [1.0 + 0j]

    def test_first_amplitude_real(self):
        k = random_ket(8, RngStream(2), count=20)
        assert np.all(k[:, 0].imag == 0)
        np.testing.assert_allclose(np.sum(np.abs(k) ** 2, axis=1), 1.0, atol=1e-12)

    def test_mean_population(self):
        k = random_ket(8, RngStream(4), count=10_000)
        assert np.mean(np.abs(k[:, 0]) ** 2) == pytest.approx(1 / 8, abs=0.01)


class TestPureGenerator:
    def test_f_one(self):
        s = gen_pure_with_fidelity(3, 1.0, RngStream(0))
        np.testing.assert_array_equal(s.amp, np.eye(8)[0])

    def test_f_zero(self):
        s = gen_pure_with_fidelity(3, 0.0, RngStream(0))
        assert s.amp[0] == 0
        assert np.vdot(s.amp, s.amp).real == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_exact_fidelity(self, seed):
        s = gen_pure_with_fidelity(4, 0.25, RngStream(seed))
        assert fidelity_to_pure(named_state("Basis0", 4), s) == pytest.approx(0.25, abs=1e-12)

    def test_rejects_bad_f(self):
        with pytest.raises(ValueError):
            gen_pure_with_fidelity(2, 1.2, RngStream(0))


class TestMixedGenerator:
    def test_f_one_is_pure_zero_state(self):
        rho = gen_mixed_with_fidelity(2, 1.0, "C", RngStream(5))
        expect = np.zeros((4, 4))
        expect[0, 0] = 1
        np.testing.assert_allclose(rho.mat, expect, atol=1e-9)

    def test_paper_example_f08(self):
        rho = gen_mixed_with_fidelity(2, 0.8, "C", RngStream(7))
        assert fidelity_to_pure(named_state("Basis0", 2), rho) == pytest.approx(0.8, abs=1e-9)

    def test_m1_one_gives_pure_state(self):
        rho = gen_mixed_with_fidelity(3, 0.6, 1.0, RngStream(1))
        assert purity(rho) == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("dist", sorted(set(M1_DISTRIBUTIONS) - {"E"}))
    def test_every_distribution_is_exact_and_physical(self, dist):
        zero = named_state("Basis0", 3)
        for i, f in enumerate(np.linspace(0.0, 1.0, 11)):
            rho = gen_mixed_with_fidelity(3, float(f), dist, RngStream(i))
            DensityMatrix(rho.mat)  # full validation
            assert fidelity_to_pure(zero, rho) == pytest.approx(f, abs=1e-9)

    def test_unknown_distribution(self):
        with pytest.raises(ValueError):
            gen_mixed_with_fidelity(2, 0.5, "Q", RngStream(0))

    def test_overlap_solver_hits_target(self):
        r = RngStream(9)
        m = column_weights(8, 0.3, r)
        x = _solve_overlaps(0.7, m, r)
        assert np.sum(m * x**2) == pytest.approx(0.49, abs=1e-12)
        assert np.all((0 <= x) & (x <= 1))

    def test_deterministic(self):
        a = gen_mixed_with_fidelity(2, 0.4, "H", RngStream(11))
        b = gen_mixed_with_fidelity(2, 0.4, "H", RngStream(11))
        assert np.array_equal(a.mat, b.mat)


class TestGenerate:
    def test_spec_validation(self):
        with pytest.raises(ValueError):
            GeneratorSpec(2, 1.5)
        with pytest.raises(ValueError):
            GeneratorSpec(2, 0.5, kind="Other")

    def test_dispatch(self):
        assert isinstance(generate(GeneratorSpec(2, 0.5, kind="Pure")), StateVector)
        assert isinstance(generate(GeneratorSpec(2, 0.5)), DensityMatrix)


class TestTransport:
    def test_identity(self):
        s = gen_pure_with_fidelity(2, 0.3, RngStream(0))
        out = transport_state(Unitary(np.eye(4)), s)
        np.testing.assert_array_equal(out.amp, s.amp)

    def test_ghz_example(self):
        g = named_state("GHZ", 3)
        rho = gen_mixed_with_fidelity(3, 0.6, "H", RngStream(2))
        moved = transport_state(householder_target_unitary(g), rho)
        assert fidelity_to_pure(g, moved) == pytest.approx(0.6, abs=1e-10)

    def test_pure_norm(self):
        s = gen_pure_with_fidelity(3, 0.3, RngStream(0))
        out = transport_state(householder_target_unitary(named_state("W", 3)), s)
        assert np.linalg.norm(out.amp) == pytest.approx(1.0, abs=1e-12)


class TestPurity:
    def test_pure(self):
        assert purity(named_state("GHZ", 3)) == pytest.approx(1.0)

    def test_maximally_mixed(self):
        assert purity(DensityMatrix.maximally_mixed(2)) == pytest.approx(0.25)

    def test_eigenvalue_oracle(self, rng):
        rho = random_mixed(3, rng)
        assert purity(rho) == pytest.approx(np.sum(np.linalg.eigvalsh(rho.mat) ** 2), abs=1e-10)


class TestUniformity:
    def test_identical_states(self):
        s = named_state("Basis0", 2)
        rep = uniformity_report([s] * 10, anchors=2, bins=10, rng=0)
        for c in rep.counts:
            assert c[-1] == 9 and c.sum() == 9

    def test_counts(self):
        states = [gen_pure_with_fidelity(4, 0.25, RngStream(i)) for i in range(100)]
        rep = uniformity_report(states, 2, 20, 1)
        assert len(rep.counts) == 2
        assert all(c.sum() == 99 for c in rep.counts)

    def test_too_few(self):
        with pytest.raises(TooFewStates):
            uniformity_report([named_state("Bell")], 1, 10)

    def test_anchor_histograms_agree(self):
        states = [gen_pure_with_fidelity(4, 0.25, RngStream(i)) for i in range(1000)]
        rep = uniformity_report(states, 2, 20, 3)
        ks = stats.ks_2samp(rep.fidelities[0], rep.fidelities[1]).statistic
        assert ks < 0.1


class TestPurityReport:
    def test_pure_distribution(self):
        rep = purity_report(2, 0.5, ["E"], count=100, rng=0)
        np.testing.assert_allclose(rep.purities["E"], 1.0, atol=1e-12)

    def test_small_constant_m1_is_low(self):
        rep = purity_report(4, 0.25, [0.01, "E"], count=100, rng=0)
        assert rep.mean("0.01") < 0.3

    def test_h_purer_than_c(self):
        rep = purity_report(4, 0.25, ["H", "C"], count=200, rng=1)
        assert rep.mean("H") > rep.mean("C")

    def test_minimum_count(self):
        with pytest.raises(ValueError):
            purity_report(2, 0.5, ["C"], count=10)
