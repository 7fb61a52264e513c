import numpy as np
import pytest
from conftest import chain, mid_gap, params_for, toy_hamiltonian
from hypothesis import given, settings
from hypothesis import strategies as st

from nearsight.densitymatrix import density_matrix_spectral
from nearsight.errors import DomainMismatchError, FitFailureError, InvalidParameterError, SolverFailureError
from nearsight.lattice import Displacement, build_chain
from nearsight.locality import (
    DecayProfile,
    crossover_radius,
    decay_profile,
    energy_hessian_fd,
    fit_exponential_rate,
    perturbed_locality_experiment,
    power_law_fit,
    site_profile,
    strong_locality_experiment,
    weak_locality_experiment,
)
from nearsight.tightbinding import toy_model


def synthetic(mags, r=None):
    r = np.arange(len(mags), dtype=float) if r is None else r
    return DecayProfile(r, np.asarray(mags, dtype=float), 0, {})


class TestDecayProfile:
    def test_identity(self):
        lat = build_chain(10)
        p = decay_profile(np.eye(20), lat, 0)
        assert p.samples[0] == (0.0, 1.0)
        assert np.all(p.magnitudes[1:] == 0)

    def test_tridiagonal(self):
        lat = build_chain(10)
        m = 0.3
        M = np.kron(np.eye(10), np.ones((2, 2)))
        for l in range(10):
            k = (l + 1) % 10
            M[2 * l:2 * l + 2, 2 * k:2 * k + 2] = m
            M[2 * k:2 * k + 2, 2 * l:2 * l + 2] = m
        p = decay_profile(M, lat, "all")
        assert p.at(1.0) == m
        assert np.all(p.magnitudes[p.distances > 1.0] == 0)

    def test_half_spacing_bins_and_cap(self):
        lat = build_chain(20)
        p = decay_profile(np.eye(40), lat, 0)
        assert np.allclose(np.diff(p.distances), 1.0)
        assert p.distances[-1] <= 0.45 * lat.period

    def test_toy_chain_decreasing(self):
        lat = chain(100)
        H = toy_hamiltonian(2.0, 0.5)
        p = decay_profile(density_matrix_spectral(H, mid_gap(H, 100)).matrix, lat)
        assert np.all(p.magnitudes > 0)
        tail = p.magnitudes[p.distances >= 2]
        above = tail[tail > 1e-13]
        assert np.all(np.diff(above) < 0)

    def test_dimension_mismatch(self):
        with pytest.raises(DomainMismatchError):
            decay_profile(np.eye(7), build_chain(10))

    def test_unsorted_rejected(self):
        with pytest.raises(InvalidParameterError):
            DecayProfile(np.array([1.0, 0.0]), np.array([1.0, 1.0]), 0, {})

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_set_max_monotone(self, seed):
        rng = np.random.default_rng(seed)
        lat = build_chain(12)
        M = rng.standard_normal((24, 24)) * (rng.random((24, 24)) < 0.5)
        extra = M.copy()
        i, j = rng.integers(0, 24, 2)
        extra[i, j] = abs(M[i, j]) + rng.random()
        a, b = decay_profile(M, lat, "all"), decay_profile(extra, lat, "all")
        assert np.all(b.magnitudes >= a.magnitudes)

    def test_site_profile_excludes_reference(self):
        lat = build_chain(10)
        p = site_profile(np.arange(10.0), lat, 3, exclude_reference=True)
        assert p.distances[0] == 1.0
        assert p.at(1.0) == 4.0


class TestFit:
    def test_exact_exponential(self):
        f = fit_exponential_rate(synthetic(np.exp(-0.3 * np.arange(41.0))))
        assert abs(f.slope + 0.3) <= 1e-10
        assert f.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_floor_recovery(self):
        f = fit_exponential_rate(synthetic(np.exp(-0.3 * np.arange(200.0)) + 1e-14), floor=0.0)
        assert abs(f.slope + 0.3) <= 1e-3
        assert f.auto_window

    def test_constant(self):
        assert abs(fit_exponential_rate(synthetic(np.full(20, 0.5))).slope) <= 1e-12

    def test_explicit_window(self):
        mags = np.where(np.arange(30.0) < 10, np.exp(-2.0 * np.arange(30.0)), np.exp(-0.5 * np.arange(30.0) - 15))
        f = fit_exponential_rate(synthetic(mags), window=(12, 29))
        assert f.slope == pytest.approx(-0.5, abs=1e-10)
        assert f.window == (12.0, 29.0)

    def test_too_few(self):
        with pytest.raises(FitFailureError):
            fit_exponential_rate(synthetic([1.0, 0.5, 0.25, 1e-20, 1e-20]))


class TestPowerLaw:
    def test_exact(self):
        g = np.array([0.1, 0.01, 0.001])
        c, a = power_law_fit(list(zip(g, -1.5 * g**0.5)))
        assert abs(c + 1.5) <= 1e-10 and abs(a - 0.5) <= 1e-10

    def test_reference_triple(self):
        c, a = power_law_fit([(0.1, -0.4711), (0.01, -0.1385), (0.001, -0.0556)])
        assert abs(c + 1.51) <= 0.02 and abs(a - 0.51) <= 0.02

    @pytest.mark.parametrize("pairs", [
        [(0.1, -0.4), (0.1, -0.3), (0.01, -0.1)],
        [(0.1, -0.4), (0.01, 0.1), (0.001, -0.05)],
        [(0.1, -0.4), (0.01, -0.1)],
    ])
    def test_invalid(self, pairs):
        with pytest.raises(InvalidParameterError):
            power_law_fit(pairs)


class TestWeak:
    def test_size_stability(self):
        a = weak_locality_experiment("gap_plus", 2.0, [0.5], n_atoms=100)[0].fit.slope
        b = weak_locality_experiment("gap_plus", 2.0, [0.5], n_atoms=200)[0].fit.slope
        assert abs(a - b) <= 0.1 * abs(a)

    def test_direct_gap_single_run(self):
        res = weak_locality_experiment("gap_plus", 2.0, [2.0])[0]
        assert res.fit.slope < 0 and res.fit.r_squared >= 0.99
        assert res.profile.metadata["gap_minus"] == 2.0

    def test_bad_fixed(self):
        with pytest.raises(InvalidParameterError):
            weak_locality_experiment("gap", 2.0, [0.5])

    def test_solver_error_names_pair(self):
        with pytest.raises(SolverFailureError, match="gap_minus=3.0"):
            weak_locality_experiment("gap_plus", 2.0, [3.0], n_atoms=20)


class TestPerturbed:
    def test_continuity(self):
        exp = perturbed_locality_experiment(0.5, 2.0, [1e-8], n_atoms=60)
        dim = 120
        dev = np.max(np.abs(exp.results[0].profile.magnitudes - exp.homogeneous.magnitudes))
        assert dev <= 10 * 1e-8 * dim

    def test_difference_decays_slower(self):
        exp = perturbed_locality_experiment(0.01, 2.0, [1e-2], n_atoms=100)
        diff_fit = fit_exponential_rate(exp.results[0].difference)
        assert abs(diff_fit.slope) <= abs(exp.homogeneous_fit.slope)

    def test_deterministic_and_localized(self):
        a = perturbed_locality_experiment(0.1, 2.0, [1e-3], "l2_upsilon", n_atoms=40, seed=3)
        b = perturbed_locality_experiment(0.1, 2.0, [1e-3], "l2_upsilon", n_atoms=40, seed=3)
        assert np.array_equal(a.results[0].profile.magnitudes, b.results[0].profile.magnitudes)
        u = np.abs(a.results[0].displacement.values.ravel())
        assert np.argmax(u) == build_chain(40).center_site

    def test_unknown_norm(self):
        with pytest.raises(InvalidParameterError):
            perturbed_locality_experiment(0.1, 2.0, [1e-3], "l1", n_atoms=20)

    def test_crossover_radius(self):
        ref = synthetic(np.exp(-np.arange(10.0)))
        diff = synthetic(1e-3 * np.exp(-0.1 * np.arange(10.0)))
        assert crossover_radius(diff, ref) == 8.0
        assert crossover_radius(synthetic(np.zeros(10)), ref) is None


class TestStrong:
    def test_self_term_excluded(self):
        res = strong_locality_experiment([0.5], n_atoms=40)[0]
        assert res.profile.distances[0] > 0

    def test_insensitive_to_gap_plus(self):
        a = strong_locality_experiment([0.1], 2.0, n_atoms=200)[0].fit.slope
        b = strong_locality_experiment([0.1], 1.0, n_atoms=200)[0].fit.slope
        assert abs(a - b) <= 0.15 * abs(a)


class TestHessian:
    def test_decoupled(self, decoupled):
        assert not energy_hessian_fd(decoupled, build_chain(8), 2).magnitudes.any()

    def test_symmetry(self):
        lat = build_chain(40)
        model = toy_model(params_for(2.0, 0.5))
        u = Displacement(np.random.default_rng(4).uniform(-0.05, 0.05, (40, 1)))
        rng = np.random.default_rng(11)
        rows = {}
        for _ in range(10):
            i = int(rng.integers(40))
            j = (i + int(rng.integers(1, 6))) % 40
            for s in (i, j):
                if s not in rows:
                    rows[s] = energy_hessian_fd(model, lat, s, 1e-4, u).blocks[:, 0, 0]
            assert rows[i][j] == pytest.approx(rows[j][i], rel=1e-4)

    def test_slope_matches_derivative_slope(self):
        # the Hessian rows decay at the same rate as the density-matrix derivative, not twice it
        lat = chain(100)
        model = toy_model(params_for(2.0, 0.1))
        hess = fit_exponential_rate(energy_hessian_fd(model, lat, 0).profile(lat)).slope
        strong = strong_locality_experiment([0.1], 2.0, n_atoms=100)[0].fit.slope
        assert hess == pytest.approx(strong, rel=0.2)

    def test_bad_step(self):
        with pytest.raises(InvalidParameterError):
            energy_hessian_fd(toy_model(params_for(2.0, 0.5)), build_chain(8), 0, 0.0)
