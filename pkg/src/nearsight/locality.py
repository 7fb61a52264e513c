"""Decay profiles, exponential and power-law rate fits, and the locality experiments.

All slopes are natural-log decay rates per unit distance, reported negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import least_squares

from .bloch import DEFAULT_HOPPING_SCALE, DEFAULT_KGRID, solve_params_for_gaps
from .densitymatrix import all_forces, density_derivative_blocks, density_matrix_spectral
from .errors import (
    DomainMismatchError,
    FitFailureError,
    InvalidParameterError,
    NearsightError,
    SolverFailureError,
)
from .lattice import Displacement, SupercellLattice, build_chain, make_perturbation
from .tightbinding import TBModel, ToyChainParams, assemble_hamiltonian, toy_model

__all__ = [
    "DecayProfile",
    "FitResult",
    "decay_profile",
    "site_profile",
    "fit_exponential_rate",
    "power_law_fit",
    "WeakResult",
    "PerturbedResult",
    "PerturbedExperiment",
    "StrongResult",
    "HessianResult",
    "weak_locality_experiment",
    "perturbed_locality_experiment",
    "strong_locality_experiment",
    "energy_hessian_fd",
    "crossover_radius",
    "DEFAULT_FLOOR",
    "DISTANCE_CAP",
]

DEFAULT_FLOOR = 1e-13
DISTANCE_CAP = 0.45
SLOPE_TOL = 0.2
STENCIL = 5


@dataclass(eq=False)
class DecayProfile:
    """Envelope ``r -> max |M|`` over one distance class per sample, ascending in ``r``."""

    distances: np.ndarray
    magnitudes: np.ndarray
    reference_site: Union[int, str]
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.distances = np.asarray(self.distances, dtype=float)
        self.magnitudes = np.asarray(self.magnitudes, dtype=float)
        if self.distances.shape != self.magnitudes.shape or self.distances.ndim != 1:
            raise DomainMismatchError("distances and magnitudes must be 1-d arrays of equal length")
        if np.any(np.diff(self.distances) <= 0):
            raise InvalidParameterError("profile distances must be strictly increasing")

    @property
    def samples(self) -> List[Tuple[float, float]]:
        return list(zip(self.distances.tolist(), self.magnitudes.tolist()))

    def __len__(self) -> int:
        return len(self.distances)

    def at(self, r: float) -> float:
        i = int(np.argmin(np.abs(self.distances - r)))
        return float(self.magnitudes[i])


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    window: Tuple[float, float]
    n_points: int
    auto_window: bool = False

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared,
                "window": list(self.window), "n_points": self.n_points, "auto_window": self.auto_window}


def _bin(lat: SupercellLattice, dist: np.ndarray, cap: float):
    width = lat.spacing / 2
    keep = dist <= cap * lat.period + 1e-12
    idx = np.rint(dist / width).astype(int)
    return idx, keep, width


def _envelope(values: np.ndarray, dist: np.ndarray, lat: SupercellLattice, cap: float):
    idx, keep, width = _bin(lat, dist, cap)
    idx, vals = idx[keep], values[keep]
    classes = np.unique(idx)
    env = np.full(classes.shape, -np.inf)
    np.maximum.at(env, np.searchsorted(classes, idx), vals)
    return classes * width, env


def decay_profile(M, lat: SupercellLattice, reference: Union[int, str, None] = None, *,
                  cap: float = DISTANCE_CAP, metadata: Optional[dict] = None) -> DecayProfile:
    """Envelope of ``|M_{lk,ab}|`` against the minimum-image distance ``r_lk``.

    ``reference`` is a site index (row ``l`` only), ``"all"`` (every site
    pair) or ``None`` for the site nearest the supercell centre.  Distances
    are binned with width ``spacing / 2`` and kept up to ``cap * period``.
    """
    M = np.abs(np.asarray(M, dtype=float))
    n = lat.n_sites
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] % n:
        raise DomainMismatchError(f"matrix of shape {M.shape} does not fit {n} sites")
    nb = M.shape[0] // n
    blocks = M.reshape(n, nb, n, nb).max(axis=(1, 3))
    if reference is None:
        reference = lat.center_site
    if isinstance(reference, str):
        if reference != "all":
            raise InvalidParameterError(f"unknown reference {reference!r}")
        values, dist = blocks.ravel(), lat.distance_matrix.ravel()
    else:
        if not 0 <= int(reference) < n:
            raise DomainMismatchError(f"reference site {reference} out of range")
        reference = int(reference)
        values, dist = blocks[reference], lat.distance_matrix[reference]
    r, env = _envelope(values, dist, lat, cap)
    return DecayProfile(r, env, reference, dict(metadata or {}))


def site_profile(values, lat: SupercellLattice, reference: int, *, exclude_reference: bool = False,
                 cap: float = DISTANCE_CAP, metadata: Optional[dict] = None) -> DecayProfile:
    """Envelope of per-site magnitudes ``values[m]`` against ``r_{reference, m}``."""
    values = np.asarray(values, dtype=float)
    if values.shape != (lat.n_sites,):
        raise DomainMismatchError(f"expected {lat.n_sites} site values, got shape {values.shape}")
    dist = lat.distance_matrix[reference]
    if exclude_reference:
        mask = np.arange(lat.n_sites) != reference
        values, dist = values[mask], dist[mask]
    r, env = _envelope(np.abs(values), dist, lat, cap)
    return DecayProfile(r, env, int(reference), dict(metadata or {}))


# --- fitting -------------------------------------------------------------------------


def _ols(x: np.ndarray, y: np.ndarray) -> Tuple[float, float, float]:
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    r2 = 1.0 if ss_tot <= 1e-300 else max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    return float(slope), float(intercept), r2


def _local_slopes(x: np.ndarray, y: np.ndarray, width: int) -> np.ndarray:
    """Least-squares slope over each run of ``width`` consecutive samples."""
    n = len(x) - width + 1
    out = np.empty(n)
    for i in range(n):
        xs, ys = x[i:i + width], y[i:i + width]
        xc = xs - xs.mean()
        out[i] = np.dot(xc, ys - ys.mean()) / np.dot(xc, xc)
    return out


def _auto_window(x: np.ndarray, y: np.ndarray) -> Tuple[int, int]:
    """Index range ``[i, j)`` of the longest run whose smoothed log-slope stays near the median.

    Smoothing over ``STENCIL`` samples absorbs the even/odd alternation of
    envelopes whose orbital channels vanish on alternate shells.  Each local
    slope is attributed to the centre sample of its stencil.
    """
    width = min(STENCIL, len(x))
    s = _local_slopes(x, y, width)
    half = width // 2
    med = np.median(s)
    ok = np.abs(s - med) <= SLOPE_TOL * abs(med) + 1e-12
    best, start, best_range = 0, None, (0, len(x))
    for i, flag in enumerate(np.append(ok, False)):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if i - start > best:
                best, best_range = i - start, (start + half, i + half)
            start = None
    return best_range


def fit_exponential_rate(p: DecayProfile, floor: float = DEFAULT_FLOOR,
                         window: Optional[Tuple[float, float]] = None) -> FitResult:
    """Least-squares fit of ``ln(magnitude) = slope * r + intercept``.

    Samples at or below ``floor`` are discarded.  Without an explicit
    ``window`` the longest contiguous stretch whose smoothed local log-slope
    is within 20% of the median local slope is used, which trims both the
    short-range head and the round-off floor.
    """
    r, m = p.distances, p.magnitudes
    use = m > floor
    if window is not None:
        lo, hi = window
        if not lo <= hi:
            raise InvalidParameterError(f"empty window {window}")
        use &= (r >= lo) & (r <= hi)
    x, y = r[use], np.log(m[use])
    if len(x) < 4:
        raise FitFailureError(f"only {len(x)} usable samples above floor {floor}")
    auto = window is None
    if auto:
        i, j = _auto_window(x, y)
        if j - i >= 4:
            x, y = x[i:j], y[i:j]
    slope, intercept, r2 = _ols(x, y)
    return FitResult(slope, intercept, r2, (float(x[0]), float(x[-1])), len(x), auto)


def power_law_fit(pairs: Sequence[Tuple[float, float]]) -> Tuple[float, float]:
    """Fit ``slope = c * gap ** alpha`` by least squares on the slopes themselves.

    The log-log regression line seeds a Gauss-Newton refinement of the
    residuals ``c * gap ** alpha - slope``; for an exact power law both agree.
    """
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 3:
        raise InvalidParameterError("need at least three (gap, slope) pairs")
    g, s = arr[:, 0], arr[:, 1]
    if np.any(g <= 0) or np.any(s >= 0):
        raise InvalidParameterError("gaps must be positive and slopes negative")
    if len(np.unique(g)) != len(g):
        raise InvalidParameterError("gaps must be distinct")
    alpha, log_c, _ = _ols(np.log(g), np.log(-s))
    fit = least_squares(lambda p: -np.exp(p[0]) * g ** p[1] - s, [log_c, alpha],
                        jac=lambda p: np.column_stack([-np.exp(p[0]) * g ** p[1],
                                                       -np.exp(p[0]) * g ** p[1] * np.log(g)]),
                        xtol=1e-15, ftol=1e-15, gtol=1e-15)
    if not fit.success:
        raise FitFailureError(f"power-law refinement did not converge: {fit.message}")
    return -float(np.exp(fit.x[0])), float(fit.x[1])


# --- experiments ---------------------------------------------------------------------


def _solve(gap_plus, gap_minus, hopping_scale, kgrid) -> ToyChainParams:
    try:
        return solve_params_for_gaps(gap_plus, gap_minus, hopping_scale=hopping_scale, kgrid=kgrid)
    except NearsightError as exc:
        raise SolverFailureError(f"gap pair (gap_plus={gap_plus}, gap_minus={gap_minus}): {exc}") from exc


def _fermi_level(H: np.ndarray, n_occ: int) -> float:
    w = np.linalg.eigvalsh(H)
    return float(0.5 * (w[n_occ - 1] + w[n_occ]))


@dataclass(eq=False)
class WeakResult:
    gap_minus: float
    gap_plus: float
    params: ToyChainParams
    fit: FitResult
    profile: DecayProfile


def weak_locality_experiment(fixed: Literal["gap_plus", "gap_minus"], fixed_value: float,
                             varying: Sequence[float], n_atoms: int = 100, kgrid: int = DEFAULT_KGRID, *,
                             hopping_scale: float = DEFAULT_HOPPING_SCALE, floor: float = DEFAULT_FLOOR,
                             window: Optional[Tuple[float, float]] = None) -> List[WeakResult]:
    """Decay of the homogeneous density matrix for a sweep of one gap at the other fixed."""
    if fixed not in ("gap_plus", "gap_minus"):
        raise InvalidParameterError(f"fixed must be 'gap_plus' or 'gap_minus', got {fixed!r}")
    lat = build_chain(n_atoms)
    out = []
    for v in varying:
        gp, gm = (fixed_value, v) if fixed == "gap_plus" else (v, fixed_value)
        params = _solve(gp, gm, hopping_scale, kgrid)
        H = assemble_hamiltonian(toy_model(params), lat).matrix
        rho = density_matrix_spectral(H, _fermi_level(H, n_atoms))
        meta = {"gap_minus": gm, "gap_plus": gp, "n_atoms": n_atoms, "kgrid": kgrid,
                "hopping_scale": hopping_scale}
        prof = decay_profile(rho.matrix, lat, lat.center_site, metadata=meta)
        out.append(WeakResult(gm, gp, params, fit_exponential_rate(prof, floor, window), prof))
    return out


def crossover_radius(difference: DecayProfile, reference: DecayProfile) -> Optional[float]:
    """Smallest ``r > 0`` at which the difference envelope reaches the reference envelope."""
    for r, d in zip(difference.distances, difference.magnitudes):
        if r > 0 and d >= reference.at(r):
            return float(r)
    return None


@dataclass(eq=False)
class PerturbedResult:
    epsilon: float
    displacement: Displacement
    profile: DecayProfile
    difference: DecayProfile
    crossover: Optional[float]
    far_field_fit: Optional[FitResult]


@dataclass(eq=False)
class PerturbedExperiment:
    gap_minus: float
    gap_plus: float
    params: ToyChainParams
    norm_kind: str
    seed: int
    homogeneous: DecayProfile
    homogeneous_fit: FitResult
    results: List[PerturbedResult]


PROFILE_FOR_NORM = {"l2_upsilon": "localized", "max": "global"}


def perturbed_locality_experiment(gap_minus: float, gap_plus: float, eps_list: Sequence[float],
                                  norm_kind: Literal["l2_upsilon", "max"] = "max", n_atoms: int = 100,
                                  seed: int = 0, *, kgrid: int = DEFAULT_KGRID,
                                  hopping_scale: float = DEFAULT_HOPPING_SCALE,
                                  decay_exponent: float = 2.0,
                                  floor: float = DEFAULT_FLOOR) -> PerturbedExperiment:
    """Density-matrix decay under seeded displacements of prescribed norm.

    An ``l2_upsilon`` budget draws a localized field, a ``max`` budget a
    global one, both centred on the middle site, which is also the profile
    reference.  The far-field fit covers ``|rho(u)|`` from the crossover
    radius outward.
    """
    if norm_kind not in PROFILE_FOR_NORM:
        raise InvalidParameterError(f"unknown norm kind {norm_kind!r}")
    lat = build_chain(n_atoms)
    params = _solve(gap_plus, gap_minus, hopping_scale, kgrid)
    model = toy_model(params)
    H0 = assemble_hamiltonian(model, lat).matrix
    eps_F = _fermi_level(H0, n_atoms)
    rho0 = density_matrix_spectral(H0, eps_F).matrix
    ref = lat.center_site
    base_meta = {"gap_minus": gap_minus, "gap_plus": gap_plus, "n_atoms": n_atoms, "seed": seed,
                 "norm_kind": norm_kind, "kgrid": kgrid, "hopping_scale": hopping_scale}
    homo = decay_profile(rho0, lat, ref, metadata={**base_meta, "epsilon": 0.0})
    homo_fit = fit_exponential_rate(homo, floor)
    results = []
    for eps in eps_list:
        u = make_perturbation(lat, PROFILE_FOR_NORM[norm_kind], eps, norm_kind, decay_exponent, seed,
                              center=ref)
        rho = density_matrix_spectral(assemble_hamiltonian(model, lat, u).matrix, eps_F).matrix
        meta = {**base_meta, "epsilon": float(eps)}
        prof = decay_profile(rho, lat, ref, metadata=meta)
        diff = decay_profile(rho - rho0, lat, ref, metadata=meta)
        cross = crossover_radius(diff, homo)
        far = None
        if cross is not None:
            try:
                far = fit_exponential_rate(prof, floor, (cross, float(prof.distances[-1])))
            except NearsightError:
                far = None
        results.append(PerturbedResult(float(eps), u, prof, diff, cross, far))
    return PerturbedExperiment(gap_minus, gap_plus, params, norm_kind, seed, homo, homo_fit, results)


@dataclass(eq=False)
class StrongResult:
    gap_minus: float
    gap_plus: float
    params: ToyChainParams
    fit: FitResult
    profile: DecayProfile


def derivative_magnitudes(model: TBModel, lat: SupercellLattice, observe_site: int,
                          u: Optional[Displacement] = None) -> np.ndarray:
    """``max_{ab,j} |d rho_{ll,ab} / d[u(m)]_j|`` for every site ``m``."""
    probes = [(m, j) for m in range(lat.n_sites) for j in range(lat.d)]
    blocks = density_derivative_blocks(model, lat, u, observe_site, probes)
    return np.abs(blocks).reshape(lat.n_sites, -1).max(axis=1)


def strong_locality_experiment(gap_minus_list: Sequence[float], gap_plus: float = 2.0, n_atoms: int = 200,
                               *, observe_site: int = 0, kgrid: int = DEFAULT_KGRID,
                               hopping_scale: float = DEFAULT_HOPPING_SCALE,
                               floor: float = DEFAULT_FLOOR,
                               window: Optional[Tuple[float, float]] = None) -> List[StrongResult]:
    """Decay of ``|d rho_{ll} / d r_m|`` with ``r_{lm}`` for each ``gap_minus`` at fixed ``gap_plus``.

    The self term ``m = l`` is left out of the profile.
    """
    lat = build_chain(n_atoms)
    out = []
    for gm in gap_minus_list:
        params = _solve(gap_plus, gm, hopping_scale, kgrid)
        mags = derivative_magnitudes(toy_model(params), lat, observe_site)
        meta = {"gap_minus": gm, "gap_plus": gap_plus, "n_atoms": n_atoms, "kgrid": kgrid,
                "hopping_scale": hopping_scale, "observe_site": observe_site}
        prof = site_profile(mags, lat, observe_site, exclude_reference=True, metadata=meta)
        out.append(StrongResult(gm, gap_plus, params, fit_exponential_rate(prof, floor, window), prof))
    return out


@dataclass(eq=False)
class HessianResult:
    probe: int
    step: float
    blocks: np.ndarray
    magnitudes: np.ndarray

    def profile(self, lat: SupercellLattice, **kw) -> DecayProfile:
        return site_profile(self.magnitudes, lat, self.probe, exclude_reference=True, **kw)


def energy_hessian_fd(model: TBModel, lat: SupercellLattice, probe: int, step: float = 1e-4,
                      u: Optional[Displacement] = None, *,
                      n_occupied: Optional[int] = None) -> HessianResult:
    """Rows ``d^2 E / d r_i d r_probe`` from central differences of the site forces.

    ``blocks[i]`` is the ``d x d`` block ``-(F_i(u + h e) - F_i(u - h e)) / 2h``
    with one column per displaced axis of ``probe``; ``magnitudes[i]`` is its
    Frobenius norm.
    """
    if not step > 0:
        raise InvalidParameterError(f"step must be positive, got {step}")
    if not 0 <= probe < lat.n_sites:
        raise DomainMismatchError(f"probe site {probe} out of range")
    u = Displacement.zeros(lat) if u is None else u
    blocks = np.zeros((lat.n_sites, lat.d, lat.d))
    for axis in range(lat.d):
        fp = all_forces(model, lat, u.moved(probe, axis, step), n_occupied=n_occupied)
        fm = all_forces(model, lat, u.moved(probe, axis, -step), n_occupied=n_occupied)
        blocks[:, :, axis] = -(fp - fm) / (2 * step)
    return HessianResult(probe, step, blocks, np.linalg.norm(blocks, axis=(1, 2)))
