"""Bloch transform of homogeneous Hamiltonians, band structures and band gaps."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .errors import InvalidParameterError, NoGapError, OutOfStripError, SolverFailureError
from .io import atomic_write_text, csv_text
from .lattice import MultiLattice
from .tightbinding import TBModel, ToyChainParams, toy_model

__all__ = [
    "BlochHamiltonian",
    "BandStructure",
    "GapReport",
    "ShiftCheck",
    "bloch_hamiltonian",
    "band_structure",
    "compute_gaps",
    "analytic_gap_plus_1d",
    "toy_gap_plus_closed_form",
    "solve_params_for_gaps",
    "spectral_shift_check",
    "chain_base",
    "DEFAULT_KGRID",
    "DEFAULT_HOPPING_SCALE",
]

DEFAULT_KGRID = 1024
DEFAULT_HOPPING_SCALE = 0.5


def chain_base(spacing: float = 1.0) -> MultiLattice:
    return MultiLattice([[spacing]], [[0.0]])


@dataclass(frozen=True)
class _BlochTerms:
    """Lattice-sum terms ``block * exp(-i r . xi)`` feeding block ``(l0, k0)``."""

    rows: np.ndarray
    cols: np.ndarray
    vectors: np.ndarray
    blocks: np.ndarray
    size: int
    n_orb: int

    def evaluate(self, xis: np.ndarray) -> np.ndarray:
        xis = np.atleast_2d(np.asarray(xis))
        phases = np.exp(-1j * (xis @ self.vectors.T))
        nb = self.n_orb
        H = np.zeros((len(xis), self.size, self.size), dtype=complex)
        for t in range(len(self.rows)):
            l0, k0 = self.rows[t], self.cols[t]
            H[:, l0 * nb:(l0 + 1) * nb, k0 * nb:(k0 + 1) * nb] += phases[:, t, None, None] * self.blocks[t]
        return H


def _bloch_terms(model: TBModel, base: MultiLattice) -> _BlochTerms:
    A, p, z = base.A, base.shifts, base.species
    d, M, nb = base.d, base.n_shifts, model.n_orb
    reach = model.cutoff + 2 * np.max(np.linalg.norm(p, axis=1)) + 1e-9
    bounds = np.ceil(reach * np.linalg.norm(np.linalg.inv(A), axis=1)).astype(int)
    rows, cols, vecs, blocks = [], [], [], []
    for l0 in range(M):
        onsite = np.array(model.onsite(z[l0]), dtype=float)
        for alpha in itertools.product(*(range(-b, b + 1) for b in bounds)):
            for k0 in range(M):
                r = p[l0] + A @ np.asarray(alpha, dtype=float) - p[k0]
                dist = np.linalg.norm(r)
                if dist < 1e-12:
                    continue
                if dist > model.cutoff:
                    continue
                rows.append(l0)
                cols.append(k0)
                vecs.append(r)
                blocks.append(model.hop(r, z[l0], z[k0]))
                if model.onsite_env is not None:
                    env = model.env(r, z[l0], z[k0])
                    onsite = onsite + 0.5 * (env + env.T)
        rows.append(l0)
        cols.append(l0)
        vecs.append(np.zeros(d))
        blocks.append(onsite)
    return _BlochTerms(np.array(rows), np.array(cols), np.array(vecs, dtype=float).reshape(-1, d),
                       np.array(blocks, dtype=float), M * nb, nb)


def _check_strip(model: TBModel, xis: np.ndarray) -> None:
    im = np.linalg.norm(np.imag(np.atleast_2d(xis)), axis=-1)
    if np.any(im > model.gamma0 / 2 + 1e-15):
        raise OutOfStripError(f"|Im xi| = {im.max()} exceeds gamma0 / 2 = {model.gamma0 / 2}")


@dataclass(frozen=True, eq=False)
class BlochHamiltonian:
    xi: np.ndarray
    matrix: np.ndarray


def bloch_hamiltonian(model: TBModel, base: MultiLattice, xi) -> BlochHamiltonian:
    """``H_xi = sum_alpha H_ref[l0 + A alpha, k0] exp(-i (l0 - k0 + A alpha) . xi)``.

    ``xi`` may be complex as long as ``|Im xi| <= gamma0 / 2``; for real
    ``xi`` the result is symmetrized to be exactly Hermitian.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=complex))
    if xi.shape != (base.d,):
        raise InvalidParameterError(f"wavevector must have {base.d} components")
    _check_strip(model, xi)
    H = _bloch_terms(model, base).evaluate(xi[None, :])[0]
    if not np.any(np.imag(xi)):
        H = 0.5 * (H + H.conj().T)
    return BlochHamiltonian(xi, H)


@dataclass(frozen=True, eq=False)
class BandStructure:
    """Sorted band energies ``bands[i, n] = eps_{n+1}(kgrid[i])``."""

    kgrid: np.ndarray
    bands: np.ndarray
    N0: int
    eps_F: float
    base: MultiLattice = field(repr=False)
    evaluate: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)

    @property
    def n_bands(self) -> int:
        return self.bands.shape[1]

    def to_csv(self, path=None) -> str:
        d = self.kgrid.shape[1]
        header = (["xi"] if d == 1 else [f"xi_{j + 1}" for j in range(d)])
        header += [f"band_{n + 1}" for n in range(self.n_bands)]
        text = csv_text(header, (list(k) + list(e) for k, e in zip(self.kgrid, self.bands)))
        if path is not None:
            atomic_write_text(path, text)
        return text


def _kgrid(base: MultiLattice, n: int) -> np.ndarray:
    frac = (np.arange(n) / n) - 0.5
    pts = np.array(list(itertools.product(frac, repeat=base.d)))
    return pts @ base.reciprocal.T


def band_structure(model: TBModel, base: MultiLattice, kgrid_size: int = DEFAULT_KGRID,
                   N0: int = 1) -> BandStructure:
    """Bands on a uniform grid of ``kgrid_size`` points per axis of the reciprocal cell.

    The Fermi level is the midpoint of the indirect-gap interval
    ``[max eps_N0, min eps_{N0+1}]``; a nonpositive interval raises
    :class:`NoGapError`.
    """
    if kgrid_size < 8:
        raise InvalidParameterError(f"k-grid needs at least 8 points, got {kgrid_size}")
    terms = _bloch_terms(model, base)
    if not 1 <= N0 < terms.size:
        raise InvalidParameterError(f"N0 must be in [1, {terms.size - 1}], got {N0}")

    def evaluate(xis):
        H = terms.evaluate(xis)
        H = 0.5 * (H + np.conj(np.swapaxes(H, -1, -2)))
        return np.linalg.eigvalsh(H)

    kgrid = _kgrid(base, kgrid_size)
    bands = evaluate(kgrid)
    vmax, cmin = bands[:, N0 - 1].max(), bands[:, N0].min()
    if cmin - vmax <= 0:
        raise NoGapError(f"bands {N0} and {N0 + 1} overlap: max valence {vmax} >= min conduction {cmin}")
    return BandStructure(kgrid, bands, N0, float(0.5 * (vmax + cmin)), base, evaluate)


@dataclass(frozen=True)
class GapReport:
    gap_minus: float
    gap_plus: float
    argmin_plus: Tuple[float, ...]
    arg_valence_max: Tuple[float, ...]
    arg_conduction_min: Tuple[float, ...]
    regime: str = "interior"

    def to_dict(self) -> dict:
        return {
            "gap_minus": self.gap_minus,
            "gap_plus": self.gap_plus,
            "argmin_plus": list(self.argmin_plus),
            "arg_valence_max": list(self.arg_valence_max),
            "arg_conduction_min": list(self.arg_conduction_min),
            "regime": self.regime,
        }


def _refine_min(fn, x0: np.ndarray, step: np.ndarray) -> Tuple[np.ndarray, float]:
    """Local minimization of ``fn`` around grid point ``x0`` within one grid step."""
    f0 = fn(x0)
    if len(x0) == 1:
        res = minimize_scalar(lambda t: fn(np.array([t])), bounds=(x0[0] - step[0], x0[0] + step[0]),
                              method="bounded", options={"xatol": 1e-13})
        x, f = np.array([res.x]), float(res.fun)
    else:
        res = minimize(fn, x0, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-15})
        x, f = res.x, float(res.fun)
    if f <= f0:
        return x, f
    return x0, f0


def compute_gaps(bs: BandStructure) -> GapReport:
    """Direct and indirect gaps, refined locally when the band structure can be re-evaluated."""
    N0, bands, kgrid = bs.N0, bs.bands, bs.kgrid
    diff = bands[:, N0] - bands[:, N0 - 1]
    i_plus = int(np.argmin(diff))
    i_v = int(np.argmax(bands[:, N0 - 1]))
    i_c = int(np.argmin(bands[:, N0]))
    n_axis = round(len(kgrid) ** (1 / kgrid.shape[1]))
    if bs.evaluate is None:
        xp, xv, xc = kgrid[i_plus], kgrid[i_v], kgrid[i_c]
        cp, vp = bands[i_plus, N0], bands[i_plus, N0 - 1]
        vmax, cmin = bands[i_v, N0 - 1], bands[i_c, N0]
    else:
        step = np.linalg.norm(bs.base.reciprocal, axis=0) / n_axis

        def eps(x, n):
            return float(bs.evaluate(np.asarray(x)[None, :])[0, n])

        xp, _ = _refine_min(lambda x: eps(x, N0) - eps(x, N0 - 1), kgrid[i_plus], step)
        xv, _ = _refine_min(lambda x: -eps(x, N0 - 1), kgrid[i_v], step)
        xc, _ = _refine_min(lambda x: eps(x, N0), kgrid[i_c], step)
        e_p = bs.evaluate(xp[None, :])[0]
        cp, vp = float(e_p[N0]), float(e_p[N0 - 1])
        vmax = max(eps(xv, N0 - 1), bands[i_v, N0 - 1])
        cmin = min(eps(xc, N0), bands[i_c, N0])
    # the gap_plus minimizer also bounds the extrema, which makes gap_plus >= gap_minus exact
    if vp > vmax:
        vmax, xv = vp, xp
    if cp < cmin:
        cmin, xc = cp, xp
    frac = np.linalg.solve(bs.base.reciprocal, np.asarray(xp, dtype=float))
    on_boundary = np.all(np.abs(2 * frac - np.round(2 * frac)) < 2.0 / n_axis)
    return GapReport(
        gap_minus=float(cmin - vmax),
        gap_plus=float(cp - vp),
        argmin_plus=tuple(float(v) for v in xp),
        arg_valence_max=tuple(float(v) for v in xv),
        arg_conduction_min=tuple(float(v) for v in xc),
        regime="boundary" if on_boundary else "interior",
    )


def analytic_gap_plus_1d(params: ToyChainParams) -> float:
    """Closed-form indirect gap of the two-orbital chain for an interior minimizer.

    ``2 |f3(1)| |c1 - c2| / sqrt((f1(1) - f2(1))^2 + (2 f3(1))^2)``.
    """
    f1, f2, f3 = params.at_unit_bond()
    num = 2 * abs(f3) * abs(params.c1 - params.c2)
    if num == 0:
        return 0.0
    return float(num / np.hypot(f1 - f2, 2 * f3))


def toy_gap_plus_closed_form(params: ToyChainParams) -> Tuple[float, str]:
    """Indirect gap of the two-orbital chain allowing for a zone-boundary minimizer.

    With ``x = cos xi`` the band splitting is ``sqrt((D + 2 F x)^2 + 16 f3^2 x^2)``
    (``D = c1 - c2``, ``F = f1(1) - f2(1)``); it is minimized over
    ``x in [-1, 1]``.  Returns the gap and ``"interior"`` or ``"boundary"``.
    """
    f1, f2, f3 = params.at_unit_bond()
    D, F = params.c1 - params.c2, f1 - f2

    def split(x):
        return float(np.sqrt((D + 2 * F * x) ** 2 + 16 * f3**2 * x**2))

    denom = 2 * F**2 + 8 * f3**2
    if denom > 0:
        x_star = -F * D / denom
        if abs(x_star) < 1:
            return analytic_gap_plus_1d(params), "interior"
    return min(split(-1.0), split(1.0)), "boundary"


def solve_params_for_gaps(target_gap_plus: float, target_gap_minus: float, *,
                          hopping_scale: float = DEFAULT_HOPPING_SCALE, kgrid: int = DEFAULT_KGRID,
                          rtol: float = 1e-6) -> ToyChainParams:
    """Two-orbital chain parameters with prescribed indirect and direct gaps.

    The on-site splitting ``c1 - c2`` equals ``gap_plus`` and the interband
    hopping ``f3(1)`` is fixed at ``hopping_scale``.  Equal intraband hoppings
    ``f1(1) = f2(1) = S / 2`` tilt both bands by ``S cos xi`` without changing
    the eigenvectors, so ``S`` alone sets ``gap_minus``.  The intraband hoppings
    are ``b r exp(-r^2 / 2)`` (stationary at the unit bond), the interband one
    a pure Gaussian; all ``d_i = 1/2``.  The result is checked against a
    ``kgrid``-point band structure to ``rtol`` relative.
    """
    gp, gm, C = float(target_gap_plus), float(target_gap_minus), float(hopping_scale)
    if not 0 < gm <= gp:
        raise InvalidParameterError(f"need 0 < gap_minus <= gap_plus, got ({gp}, {gm})")
    if not C > 0:
        raise InvalidParameterError(f"hopping_scale must be positive, got {C}")
    # interior branch: gap_minus = gap_plus * sqrt(1 - (S / 2C)^2)
    S = 2 * C * np.sqrt(max(0.0, 1.0 - (gm / gp) ** 2))
    root = np.sqrt(max(4 * C**2 - S**2, 0.0))
    if S > 0 and (root == 0 or S * gp / (4 * C * root) > 1):
        # band extrema sit at the zone boundary: gap_minus = sqrt(gap_plus^2 + 16 C^2) - 2S
        S = 0.5 * (np.sqrt(gp**2 + 16 * C**2) - gm)
    e = np.exp(0.5)
    params = ToyChainParams(
        c1=gp / 2, c2=-gp / 2,
        a=(0.0, 0.0, C * e),
        b=(S / 2 * e, S / 2 * e, 0.0),
        d=(0.5, 0.5, 0.5),
    )
    report = compute_gaps(band_structure(toy_model(params), chain_base(), kgrid, 1))
    err_p = abs(report.gap_plus - gp) / gp
    err_m = abs(report.gap_minus - gm) / gm
    if err_p > rtol or err_m > rtol:
        raise SolverFailureError(
            f"targets (gap_plus={gp}, gap_minus={gm}) reached ({report.gap_plus}, {report.gap_minus})"
        )
    return params


@dataclass(frozen=True, eq=False)
class ShiftCheck:
    zetas: np.ndarray
    distances: np.ndarray
    frobenius: np.ndarray
    ratios: np.ndarray
    fitted_cr: float
    max_ratio: float
    weyl_ok: bool


def _hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    d = np.abs(a[:, None] - b[None, :])
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def spectral_shift_check(model: TBModel, base: MultiLattice, xi, zeta_list: Sequence,
                         *, atol: float = 1e-12) -> ShiftCheck:
    """Compare ``sigma(H_xi)`` with ``sigma(H_{xi + i zeta})`` for a list of ``zeta``.

    Reports the spectral Hausdorff distances, the Frobenius norms of
    ``H_{xi + i zeta} - H_xi``, the ratios distance / |zeta| and a least-squares
    constant ``c_r`` with distance ~ c_r |zeta|.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    zetas = np.array([np.atleast_1d(np.asarray(z, dtype=float)) for z in zeta_list])
    _check_strip(model, 1j * zetas)
    A = bloch_hamiltonian(model, base, xi).matrix
    ev_a = np.linalg.eigvalsh(A)
    dist, frob = [], []
    for z in zetas:
        if not np.any(z):
            dist.append(0.0)
            frob.append(0.0)
            continue
        B = bloch_hamiltonian(model, base, xi + 1j * z).matrix
        dist.append(_hausdorff(ev_a.astype(complex), np.linalg.eigvals(B)))
        frob.append(float(np.linalg.norm(B - A)))
    dist, frob = np.array(dist), np.array(frob)
    size = np.linalg.norm(zetas, axis=1)
    ratios = np.divide(dist, size, out=np.zeros_like(dist), where=size > 0)
    cr = float(dist @ size / (size @ size)) if np.any(size > 0) else 0.0
    return ShiftCheck(zetas, dist, frob, ratios, cr, float(ratios.max(initial=0.0)),
                      bool(np.all(dist <= frob + atol)))
