import numpy as np
import pytest
from conftest import DECOUPLED, params_for, unit_bond_params
from hypothesis import given, settings
from hypothesis import strategies as st

from nearsight.bloch import (
    analytic_gap_plus_1d,
    band_structure,
    bloch_hamiltonian,
    chain_base,
    compute_gaps,
    solve_params_for_gaps,
    spectral_shift_check,
    toy_gap_plus_closed_form,
)
from nearsight.errors import InvalidParameterError, NoGapError, OutOfStripError
from nearsight.lattice import MultiLattice, build_chain, build_supercell
from nearsight.tightbinding import assemble_hamiltonian, toy_model

BASE = chain_base()
EXAMPLE = unit_bond_params(1.0, -1.0, 0.2, -0.2, 0.3)


def reference_bloch(p, xi):
    f1, f2, f3 = p.at_unit_bond()
    c = np.cos(xi)
    return np.array([[p.c1 + 2 * f1 * c, 2 * f3 * c], [2 * f3 * c, p.c2 + 2 * f2 * c]])


class TestBlochHamiltonian:
    def test_quarter_zone(self):
        H = bloch_hamiltonian(toy_model(EXAMPLE), BASE, np.pi / 2).matrix
        assert np.allclose(H, np.diag([1.0, -1.0]), atol=1e-15)

    def test_zone_center(self):
        H = bloch_hamiltonian(toy_model(EXAMPLE), BASE, 0.0).matrix
        assert np.allclose(H, [[1.4, 0.6], [0.6, -1.4]], atol=1e-14)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-np.pi, np.pi))
    def test_matches_closed_form(self, xi):
        H = bloch_hamiltonian(toy_model(EXAMPLE), BASE, xi).matrix
        assert np.allclose(H, reference_bloch(EXAMPLE, xi), atol=1e-14)
        assert np.linalg.norm(H - H.conj().T) <= 1e-13 * np.linalg.norm(H)

    def test_strip(self):
        model = toy_model(EXAMPLE)
        bloch_hamiltonian(model, BASE, 0.3 + 0.5j)
        with pytest.raises(OutOfStripError):
            bloch_hamiltonian(model, BASE, 0.3 + 0.51j)

    def test_wrong_dimension(self):
        with pytest.raises(InvalidParameterError):
            bloch_hamiltonian(toy_model(EXAMPLE), BASE, [0.1, 0.2])

    def test_two_site_cell_folds_chain(self):
        # a chain described with a doubled cell has the folded spectrum of the simple one
        model = toy_model(params_for(2.0, 0.5))
        doubled = MultiLattice([[2.0]], [[0.0], [1.0]])
        for xi in np.linspace(-np.pi / 2, np.pi / 2, 7):
            w2 = np.linalg.eigvalsh(bloch_hamiltonian(model, doubled, xi).matrix)
            w1 = np.concatenate([np.linalg.eigvalsh(bloch_hamiltonian(model, BASE, k).matrix)
                                 for k in (xi, xi + np.pi)])
            assert np.allclose(w2, np.sort(w1), atol=1e-12)


@pytest.mark.parametrize("n_cells", [16, 64])
def test_supercell_consistency(n_cells):
    model = toy_model(params_for(1.0, 0.1))
    H = assemble_hamiltonian(model, build_chain(n_cells)).matrix
    xis = 2 * np.pi * np.arange(n_cells) / n_cells
    bloch = np.concatenate([np.linalg.eigvalsh(bloch_hamiltonian(model, BASE, x).matrix) for x in xis])
    assert np.max(np.abs(np.sort(bloch) - np.linalg.eigvalsh(H))) <= 1e-10


def test_supercell_consistency_2d():
    from nearsight.tightbinding import TBModel

    def hop(r, zl=0, zk=0):
        rr = float(np.linalg.norm(r))
        return np.exp(-rr) * np.array([[0.3, 0.1], [0.1, -0.2]])

    model = TBModel(2, hop, lambda z=0: np.diag([1.0, -1.0]), 1.5, 1.0, 1.0)
    base = MultiLattice(np.eye(2), [[0.0, 0.0]])
    lat = build_supercell(base, (4, 5))
    H = assemble_hamiltonian(model, lat).matrix
    vals = []
    for m1 in range(4):
        for m2 in range(5):
            xi = base.reciprocal @ np.array([m1 / 4, m2 / 5])
            vals.extend(np.linalg.eigvalsh(bloch_hamiltonian(model, base, xi).matrix))
    assert np.allclose(np.sort(vals), np.linalg.eigvalsh(H), atol=1e-10)


class TestBandStructure:
    def test_flat_bands(self):
        bs = band_structure(toy_model(DECOUPLED), BASE, 16)
        assert np.all(bs.bands[:, 0] == -1.0) and np.all(bs.bands[:, 1] == 1.0)
        assert bs.eps_F == 0.0
        rep = compute_gaps(bs)
        assert rep.gap_minus == rep.gap_plus == 2.0

    def test_metal(self):
        with pytest.raises(NoGapError):
            band_structure(toy_model(unit_bond_params(-0.1, 0.1, 0.5, 0.5, 0.0)), BASE, 64)

    def test_sorted_and_insulating(self):
        bs = band_structure(toy_model(params_for(2.0, 0.01)), BASE, 256)
        assert np.all(np.diff(bs.bands, axis=1) >= 0)
        assert np.all(bs.bands[:, 0] < bs.eps_F) and np.all(bs.bands[:, 1] > bs.eps_F)

    @pytest.mark.parametrize("k,n0", [(4, 1), (16, 0), (16, 2)])
    def test_bad_arguments(self, k, n0):
        with pytest.raises(InvalidParameterError):
            band_structure(toy_model(EXAMPLE), BASE, k, n0)

    def test_extrema_locations_vs_finer_grid(self):
        model = toy_model(params_for(2.0, 0.3))
        coarse, fine = band_structure(model, BASE, 64), band_structure(model, BASE, 640)
        step = 2 * np.pi / 64
        for n, pick in ((0, np.argmax), (1, np.argmin)):
            xc, xf = coarse.kgrid[pick(coarse.bands[:, n]), 0], fine.kgrid[pick(fine.bands[:, n]), 0]
            gap = abs((xc - xf + np.pi) % (2 * np.pi) - np.pi)
            assert gap <= step

    def test_continuity_refines_linearly(self):
        model = toy_model(params_for(1.0, 0.5))
        jumps = [np.max(np.abs(np.diff(band_structure(model, BASE, k).bands, axis=0))) for k in (64, 128, 256)]
        assert jumps[0] / jumps[1] == pytest.approx(2.0, rel=0.05)
        assert jumps[1] / jumps[2] == pytest.approx(2.0, rel=0.05)

    def test_csv(self):
        text = band_structure(toy_model(EXAMPLE), BASE, 8).to_csv()
        lines = text.splitlines()
        assert lines[0] == "xi,band_1,band_2"
        assert len(lines) == 9
        assert float(lines[1].split(",")[0]) == -np.pi


class TestGaps:
    def test_example_value(self):
        expected = 2 * 0.3 * 2 / np.sqrt(0.4**2 + 0.6**2)
        assert analytic_gap_plus_1d(EXAMPLE) == pytest.approx(expected, rel=1e-14)
        assert expected == pytest.approx(1.66410, abs=1e-5)
        rep = compute_gaps(band_structure(toy_model(EXAMPLE), BASE, 1024))
        assert rep.gap_plus == pytest.approx(expected, abs=1e-8)
        assert rep.regime == "interior"

    def test_indirect_gap_strict(self):
        rep = compute_gaps(band_structure(toy_model(params_for(2.0, 0.5)), BASE, 1024))
        assert rep.gap_plus > rep.gap_minus
        assert rep.arg_valence_max != rep.arg_conduction_min

    @pytest.mark.parametrize("p", [
        unit_bond_params(0.5, 0.5, 0.2, -0.1, 0.3),
        unit_bond_params(1.0, -1.0, 0.2, -0.1, 0.0),
    ])
    def test_analytic_zero(self, p):
        assert analytic_gap_plus_1d(p) == 0.0

    def test_boundary_regime(self):
        p = unit_bond_params(1.0, -1.0, 0.15, -0.15, 0.1)
        value, regime = toy_gap_plus_closed_form(p)
        assert regime == "boundary"
        assert value == pytest.approx(np.sqrt((2 - 0.6) ** 2 + 16 * 0.01), rel=1e-14)
        rep = compute_gaps(band_structure(toy_model(p), BASE, 1024))
        assert rep.gap_plus == pytest.approx(value, abs=1e-10)
        assert rep.regime == "boundary"
        assert analytic_gap_plus_1d(p) < value

    @settings(max_examples=15, deadline=None)
    @given(st.floats(0.05, 3.0), st.floats(0.01, 1.0))
    def test_gap_ordering(self, gp, frac):
        rep = compute_gaps(band_structure(toy_model(params_for(gp, gp * frac)), BASE, 128))
        assert rep.gap_plus >= rep.gap_minus


class TestSolver:
    @pytest.mark.parametrize("gp,gm", [(2.0, 2.0), (2.0, 0.01), (0.25, 0.01), (2.0, 1 / 512), (1.0, 0.999)])
    def test_targets(self, gp, gm):
        p = solve_params_for_gaps(gp, gm)
        rep = compute_gaps(band_structure(toy_model(p), BASE, 1024))
        assert rep.gap_plus == pytest.approx(gp, rel=1e-6)
        assert rep.gap_minus == pytest.approx(gm, rel=1e-6)
        assert p.d == (0.5, 0.5, 0.5)

    def test_direct_gap_extrema_coincide(self):
        rep = compute_gaps(band_structure(toy_model(solve_params_for_gaps(2.0, 2.0)), BASE, 1024))
        assert rep.arg_valence_max == pytest.approx(rep.arg_conduction_min, abs=1e-6)

    def test_deterministic(self):
        assert solve_params_for_gaps(1.0, 0.1) == solve_params_for_gaps(1.0, 0.1)

    @pytest.mark.parametrize("gp,gm", [(0.5, 2.0), (1.0, 0.0), (-1.0, -2.0)])
    def test_infeasible(self, gp, gm):
        with pytest.raises(InvalidParameterError):
            solve_params_for_gaps(gp, gm)

    def test_boundary_branch(self):
        # with a small interband hopping the band extrema sit at the zone boundary
        p = solve_params_for_gaps(2.0, 0.3, hopping_scale=0.1)
        rep = compute_gaps(band_structure(toy_model(p), BASE, 1024))
        assert rep.gap_minus == pytest.approx(0.3, rel=1e-6)
        assert rep.gap_plus == pytest.approx(2.0, rel=1e-6)


class TestSpectralShift:
    def test_zero_shift(self):
        chk = spectral_shift_check(toy_model(params_for(2.0, 0.5)), BASE, 0.4, [0.0])
        assert chk.distances[0] == 0.0 and chk.ratios[0] == 0.0

    def test_linear_and_weyl(self):
        model = toy_model(params_for(2.0, 0.5))
        zetas = [s * model.gamma0 for s in (1e-3, 1e-2, 1e-1)]
        chk = spectral_shift_check(model, BASE, 0.7, zetas)
        assert chk.weyl_ok
        assert chk.ratios.max() / chk.ratios.min() - 1 < 0.25
        assert chk.fitted_cr > 0

    def test_out_of_strip(self):
        model = toy_model(params_for(2.0, 0.5))
        with pytest.raises(OutOfStripError):
            spectral_shift_check(model, BASE, 0.1, [model.gamma0])
