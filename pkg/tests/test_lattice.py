import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nearsight.errors import (
    DomainMismatchError,
    InvalidParameterError,
    InvalidSizeError,
    PerturbationTooLargeError,
)
from nearsight.lattice import (
    Displacement,
    MultiLattice,
    build_chain,
    build_supercell,
    is_admissible,
    make_perturbation,
    min_image_distance,
    strain_norm_max,
    strain_seminorm_l2,
)


def brute_l2(lat, u, upsilon):
    n = lat.n_sites
    total = 0.0
    for l in range(n):
        for k in range(n):
            if k == l:
                continue
            rho = abs(l - k)
            rho = min(rho, n - rho)
            total += np.exp(-2 * upsilon * rho) * np.sum((u[k] - u[l]) ** 2)
    return np.sqrt(total)


def brute_max(lat, u):
    n = lat.n_sites
    best = 0.0
    for l in range(n):
        for k in range(n):
            if k != l:
                rho = min(abs(l - k), n - abs(l - k))
                best = max(best, np.linalg.norm(u[k] - u[l]) / rho)
    return best


class TestChain:
    def test_small_chain(self):
        lat = build_chain(4, 1.0)
        assert lat.positions.ravel().tolist() == [0.0, 1.0, 2.0, 3.0]
        assert lat.period == 4.0
        assert lat.d == 1

    @pytest.mark.parametrize("n", [100, 200])
    def test_sizes(self, n):
        lat = build_chain(n)
        assert lat.n_sites == n
        assert lat.period == pytest.approx(n)

    def test_spacing(self):
        lat = build_chain(5, 0.5)
        assert lat.spacing == pytest.approx(0.5)
        assert lat.period == pytest.approx(2.5)

    @pytest.mark.parametrize("n", [0, 1, -3])
    def test_too_small(self, n):
        with pytest.raises(InvalidSizeError):
            build_chain(n)

    def test_bad_spacing(self):
        with pytest.raises(InvalidParameterError):
            build_chain(4, 0.0)


class TestMultiLattice:
    def test_singular(self):
        with pytest.raises(InvalidParameterError):
            MultiLattice([[1.0, 2.0], [2.0, 4.0]], [[0.0, 0.0]])

    def test_shift_reduction(self):
        base = MultiLattice([[2.0]], [[3.5], [0.0]])
        assert base.shifts.ravel().tolist() == [-0.5, 0.0]

    def test_supercell_count_and_order(self):
        base = MultiLattice(np.eye(2), [[0.0, 0.0], [0.5, 0.5]])
        lat = build_supercell(base, (3, 2))
        assert lat.n_sites == 2 * 3 * 2
        labels = [tuple(c) + (s,) for c, s in zip(lat.cells, lat.shift_index)]
        assert labels == sorted(labels)

    def test_reciprocal(self):
        base = MultiLattice([[2.0, 0.0], [1.0, 1.0]], [[0.0, 0.0]])
        assert np.allclose(base.A.T @ base.reciprocal, 2 * np.pi * np.eye(2))

    def test_min_image_2d_oblique(self):
        base = MultiLattice([[1.0, 0.5], [0.0, 1.0]], [[0.0, 0.0]])
        lat = build_supercell(base, (4, 4))
        D = lat.distance_matrix
        for i in range(lat.n_sites):
            for j in range(lat.n_sites):
                best = min(
                    np.linalg.norm(lat.positions[i] - lat.positions[j] + lat.cell_matrix @ np.array([a, b]))
                    for a in range(-2, 3) for b in range(-2, 3)
                )
                assert D[i, j] == pytest.approx(best, abs=1e-12)


class TestMinImage:
    @pytest.mark.parametrize("i,j,expected", [(0, 9, 1.0), (0, 5, 5.0), (3, 3, 0.0)])
    def test_examples(self, i, j, expected):
        assert min_image_distance(build_chain(10), i, j) == expected

    def test_out_of_range(self):
        with pytest.raises(DomainMismatchError):
            min_image_distance(build_chain(10), 0, 10)

    def test_symmetric_exact_and_triangle(self):
        lat = build_chain(13, 0.7)
        D = lat.distance_matrix
        assert np.array_equal(D, D.T)
        assert np.all(np.diag(D) == 0)
        assert np.all(D[~np.eye(13, dtype=bool)] > 0)
        assert np.all(D[:, :, None] <= D[:, None, :] + D.T[None, :, :] + 1e-12)


class TestStrainNorms:
    def test_zero(self):
        lat = build_chain(10)
        u = Displacement.zeros(lat)
        assert strain_seminorm_l2(lat, u) == 0.0
        assert strain_norm_max(lat, u) == 0.0

    def test_two_site(self):
        lat = build_chain(2)
        delta, ups = 0.3, 1.0
        u = Displacement([0.0, delta])
        expected = abs(delta) * np.sqrt(2 * np.exp(-2 * ups))
        assert strain_seminorm_l2(lat, u, ups) == pytest.approx(expected, rel=1e-14)

    def test_l2_brute_force(self):
        lat = build_chain(100)
        u = np.random.default_rng(3).standard_normal((100, 1))
        assert strain_seminorm_l2(lat, Displacement(u), 1.0) == pytest.approx(brute_l2(lat, u, 1.0), rel=1e-12)

    def test_max_brute_force(self):
        lat = build_chain(40)
        u = np.random.default_rng(4).standard_normal((40, 1))
        assert strain_norm_max(lat, Displacement(u)) == pytest.approx(brute_max(lat, u), rel=1e-12)

    def test_affine(self):
        # a uniform strain on the open segment 0..n/2 sees ratio |c| for every pair inside it
        lat = build_chain(40)
        c = 0.01
        x = lat.positions.ravel()
        u = c * np.minimum(x, 40 - x)
        assert strain_norm_max(lat, Displacement(u)) == pytest.approx(c, rel=1e-12)

    def test_bad_upsilon(self):
        lat = build_chain(4)
        with pytest.raises(InvalidParameterError):
            strain_seminorm_l2(lat, Displacement.zeros(lat), 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(DomainMismatchError):
            strain_norm_max(build_chain(4), Displacement(np.zeros(5)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
    def test_homogeneity(self, seed, c):
        lat = build_chain(17)
        u = Displacement(np.random.default_rng(seed).standard_normal((17, 1)))
        assert strain_seminorm_l2(lat, u * c) == pytest.approx(c * strain_seminorm_l2(lat, u), rel=1e-12)
        assert strain_norm_max(lat, u * c) == pytest.approx(c * strain_norm_max(lat, u), rel=1e-12)


class TestAdmissible:
    def test_zero(self):
        lat = build_chain(10)
        assert is_admissible(lat, Displacement.zeros(lat), 0.5)
        assert is_admissible(lat, Displacement.zeros(lat), 1.0)

    def test_collision(self):
        lat = build_chain(10)
        assert not is_admissible(lat, Displacement.zeros(lat).moved(1, 0, 1.0), 0.5)

    def test_small_displacement(self):
        lat = build_chain(20)
        u = np.random.default_rng(0).uniform(-0.1, 0.1, (20, 1))
        assert is_admissible(lat, Displacement(u), 0.5)

    def test_bad_threshold(self):
        lat = build_chain(4)
        with pytest.raises(InvalidParameterError):
            is_admissible(lat, Displacement.zeros(lat), 0.0)


class TestPerturbation:
    def test_nonpositive_norm(self):
        with pytest.raises(InvalidParameterError):
            make_perturbation(build_chain(10), "global", 0.0, "max")

    def test_localized_l2(self):
        lat = build_chain(100)
        u = make_perturbation(lat, "localized", 1e-4, "l2_upsilon", 2.0, seed=7)
        assert abs(strain_seminorm_l2(lat, u) - 1e-4) <= 1e-14

    def test_global_max(self):
        lat = build_chain(100)
        u = make_perturbation(lat, "global", 1e-2, "max", 2.0, seed=7)
        assert abs(strain_norm_max(lat, u) - 1e-2) <= 1e-14

    def test_localized_envelope(self):
        lat = build_chain(50)
        u = make_perturbation(lat, "localized", 1e-3, "l2_upsilon", 3.0, seed=1, center=25)
        mags = np.abs(u.values.ravel())
        assert np.argmax(mags) == 25
        assert mags[0] < mags[20]

    def test_deterministic(self):
        lat = build_chain(30)
        a = make_perturbation(lat, "global", 1e-3, "max", seed=11)
        b = make_perturbation(lat, "global", 1e-3, "max", seed=11)
        c = make_perturbation(lat, "global", 1e-3, "max", seed=12)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    def test_decay_exponent_must_exceed_dimension(self):
        with pytest.raises(InvalidParameterError):
            make_perturbation(build_chain(10), "localized", 1e-3, "l2_upsilon", 1.0)

    def test_too_large(self):
        # any sign change between neighbours brings them within 0.1 of each other
        with pytest.raises(PerturbationTooLargeError):
            make_perturbation(build_chain(10), "global", 0.9, "max", seed=0)
