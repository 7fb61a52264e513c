"""Finite periodic multilattices, displacement fields and strain norms.

A :class:`MultiLattice` is the union of ``M`` shifted copies of the Bravais
lattice ``A Z^d``; a :class:`SupercellLattice` repeats its unit cell
``repeats[i]`` times along each axis and closes it periodically.  All
distances on a supercell use the minimum-image convention.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Optional, Sequence

import numpy as np

from .errors import (
    DomainMismatchError,
    InvalidParameterError,
    InvalidSizeError,
    PerturbationTooLargeError,
)

__all__ = [
    "MultiLattice",
    "SupercellLattice",
    "Displacement",
    "build_supercell",
    "build_chain",
    "min_image_distance",
    "strain_seminorm_l2",
    "strain_norm_max",
    "is_admissible",
    "make_perturbation",
    "DEFAULT_UPSILON",
    "MAX_RESAMPLES",
]

DEFAULT_UPSILON = 1.0
MAX_RESAMPLES = 100


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class MultiLattice:
    """Union of shifted Bravais lattices ``p_i + A Z^d``.

    Parameters
    ----------
    A : (d, d) array_like
        Lattice generator; column ``j`` is the ``j``-th primitive vector.
    shifts : (M, d) array_like
        Shift vectors. They are reduced into the unit cell ``A [-1/2, 1/2)^d``.
    species : sequence of int, optional
        Species label of each shift (defaults to all zeros).
    """

    A: np.ndarray
    shifts: np.ndarray
    species: tuple = ()

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        if A.shape[0] != A.shape[1] or A.shape[0] not in (1, 2, 3):
            raise InvalidParameterError(f"lattice generator must be d x d with d in 1..3, got {A.shape}")
        if abs(np.linalg.det(A)) < 1e-12:
            raise InvalidParameterError("lattice generator is singular")
        d = A.shape[0]
        shifts = np.array(self.shifts, dtype=float).reshape(-1, d)
        if len(shifts) == 0:
            raise InvalidParameterError("at least one shift is required")
        frac = np.linalg.solve(A, shifts.T).T
        frac = frac - np.floor(frac + 0.5)
        shifts = (A @ frac.T).T
        species = tuple(int(s) for s in self.species) or (0,) * len(shifts)
        if len(species) != len(shifts):
            raise InvalidParameterError("one species label per shift is required")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "shifts", _frozen(shifts))
        object.__setattr__(self, "species", species)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def n_shifts(self) -> int:
        return len(self.shifts)

    @cached_property
    def reciprocal(self) -> np.ndarray:
        """Reciprocal generator ``2 pi A^{-T}`` (columns are reciprocal vectors)."""
        return 2 * np.pi * np.linalg.inv(self.A).T


@dataclass(frozen=True, eq=False)
class SupercellLattice:
    """Finite periodic realization of a :class:`MultiLattice`.

    Sites are ordered lexicographically by cell index, then shift index.
    """

    base: MultiLattice
    repeats: tuple
    positions: np.ndarray = field(repr=False)
    cells: np.ndarray = field(repr=False)
    shift_index: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def n_sites(self) -> int:
        return len(self.positions)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.repeats))

    @cached_property
    def cell_matrix(self) -> np.ndarray:
        """Supercell generator ``A diag(repeats)``."""
        return self.base.A @ np.diag(np.asarray(self.repeats, dtype=float))

    @cached_property
    def period(self) -> float:
        """Smallest width of the supercell (the wrap length of a chain)."""
        inv = np.linalg.inv(self.cell_matrix)
        return float(1.0 / np.max(np.linalg.norm(inv, axis=1)))

    @cached_property
    def species(self) -> np.ndarray:
        s = np.asarray(self.base.species, dtype=int)[self.shift_index]
        s.flags.writeable = False
        return s

    @cached_property
    def distance_matrix(self) -> np.ndarray:
        """Minimum-image distances between reference sites."""
        r = np.linalg.norm(self.pair_vectors(), axis=-1)
        r.flags.writeable = False
        return r

    @cached_property
    def spacing(self) -> float:
        """Smallest distance between two distinct reference sites."""
        r = self.distance_matrix
        return float(np.min(r[~np.eye(self.n_sites, dtype=bool)]))

    def minimum_image(self, vectors: np.ndarray) -> np.ndarray:
        """Map displacement vectors ``(..., d)`` to their shortest periodic image."""
        vectors = np.asarray(vectors, dtype=float)
        L = self.cell_matrix
        # subtracting whole lattice vectors keeps exactly representable inputs exact
        frac = vectors @ np.linalg.inv(L).T
        wrapped = vectors - np.round(frac) @ L.T
        if self.d == 1:
            return wrapped
        # Rounding fractional coordinates is only exact for orthogonal cells.
        best = wrapped
        best_norm = np.linalg.norm(wrapped, axis=-1)
        for shift in itertools.product((-1, 0, 1), repeat=self.d):
            if not any(shift):
                continue
            cand = wrapped + L @ np.asarray(shift, dtype=float)
            n = np.linalg.norm(cand, axis=-1)
            better = n < best_norm - 1e-14
            best = np.where(better[..., None], cand, best)
            best_norm = np.where(better, n, best_norm)
        return best

    def pair_vectors(self, positions: Optional[np.ndarray] = None) -> np.ndarray:
        """Minimum-image bond vectors ``r[l, k] = x_l - x_k``, shape ``(n, n, d)``."""
        x = self.positions if positions is None else np.asarray(positions, dtype=float)
        return self.minimum_image(x[:, None, :] - x[None, :, :])

    def nearest_site(self, point) -> int:
        """Index of the site closest (minimum image) to ``point``."""
        v = self.minimum_image(self.positions - np.asarray(point, dtype=float))
        return int(np.argmin(np.linalg.norm(v, axis=-1)))

    @property
    def center_site(self) -> int:
        """Site nearest the geometric center of the supercell."""
        frac_center = np.full(self.d, 0.5)
        point = self.cell_matrix @ frac_center + self.positions[0]
        dist = np.linalg.norm(self.positions - point, axis=-1)
        return int(np.argmin(dist))


def build_supercell(base: MultiLattice, repeats: Sequence[int]) -> SupercellLattice:
    repeats = tuple(int(n) for n in np.atleast_1d(repeats))
    if len(repeats) != base.d:
        raise InvalidSizeError(f"need {base.d} repeat counts, got {len(repeats)}")
    if any(n < 1 for n in repeats):
        raise InvalidSizeError(f"repeat counts must be >= 1, got {repeats}")
    cells, shift_idx, pos = [], [], []
    for cell in itertools.product(*(range(n) for n in repeats)):
        origin = base.A @ np.asarray(cell, dtype=float)
        for i, p in enumerate(base.shifts):
            cells.append(cell)
            shift_idx.append(i)
            pos.append(origin + p)
    cells = np.array(cells, dtype=int)
    shift_idx = np.array(shift_idx, dtype=int)
    for a in (cells, shift_idx):
        a.flags.writeable = False
    return SupercellLattice(base, repeats, _frozen(pos), cells, shift_idx)


def build_chain(n_atoms: int, spacing: float = 1.0) -> SupercellLattice:
    """Periodic 1D chain with sites ``0, spacing, ..., (n - 1) spacing``."""
    if int(n_atoms) != n_atoms or n_atoms < 2:
        raise InvalidSizeError(f"a chain needs at least 2 atoms, got {n_atoms}")
    if not spacing > 0:
        raise InvalidParameterError(f"spacing must be positive, got {spacing}")
    return build_supercell(MultiLattice([[spacing]], [[0.0]]), [int(n_atoms)])


def _check_index(lat: SupercellLattice, i: int) -> int:
    if int(i) != i or not 0 <= i < lat.n_sites:
        raise DomainMismatchError(f"site index {i} out of range for {lat.n_sites} sites")
    return int(i)


def min_image_distance(lat: SupercellLattice, i: int, j: int) -> float:
    i, j = _check_index(lat, i), _check_index(lat, j)
    return float(lat.distance_matrix[i, j])


@dataclass(frozen=True, eq=False)
class Displacement:
    """Displacement field ``u``: one ``d``-vector per site, in lattice length units."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def zeros(cls, lat: SupercellLattice) -> "Displacement":
        return cls(np.zeros((lat.n_sites, lat.d)))

    def __mul__(self, c: float) -> "Displacement":
        return Displacement(self.values * c)

    __rmul__ = __mul__

    def check(self, lat: SupercellLattice) -> None:
        if self.values.shape != (lat.n_sites, lat.d):
            raise DomainMismatchError(
                f"displacement has shape {self.values.shape}, lattice needs {(lat.n_sites, lat.d)}"
            )

    def moved(self, site: int, axis: int, step: float) -> "Displacement":
        """Copy with ``u(site)[axis]`` increased by ``step``."""
        v = self.values.copy()
        v[site, axis] += step
        return Displacement(v)


def _as_displacement(lat: SupercellLattice, u) -> Displacement:
    if u is None:
        return Displacement.zeros(lat)
    if not isinstance(u, Displacement):
        u = Displacement(u)
    u.check(lat)
    return u


def strain_seminorm_l2(lat: SupercellLattice, u: Displacement, upsilon: float = DEFAULT_UPSILON) -> float:
    r"""Weighted strain seminorm.

    .. math::

        \|Du\|_{\ell^2_\Upsilon} = \Big(\sum_\ell \sum_{\rho \neq 0}
            e^{-2\Upsilon|\rho|}\,|u(\ell+\rho) - u(\ell)|^2\Big)^{1/2}

    where ``rho`` runs over the minimum-image differences to every other site.
    """
    if not upsilon > 0:
        raise InvalidParameterError(f"upsilon must be positive, got {upsilon}")
    u = _as_displacement(lat, u)
    r = lat.distance_matrix
    diff = u.values[None, :, :] - u.values[:, None, :]
    w = np.exp(-2.0 * upsilon * r)
    np.fill_diagonal(w, 0.0)
    return float(np.sqrt(np.sum(w * np.sum(diff**2, axis=-1))))


def strain_norm_max(lat: SupercellLattice, u: Displacement) -> float:
    """``sup_l sup_rho |D_rho u(l)| / |rho|`` over minimum-image differences."""
    u = _as_displacement(lat, u)
    r = lat.distance_matrix.copy()
    np.fill_diagonal(r, np.inf)
    diff = np.linalg.norm(u.values[None, :, :] - u.values[:, None, :], axis=-1)
    return float(np.max(diff / r))


def is_admissible(lat: SupercellLattice, u: Displacement, m_min: float) -> bool:
    """True iff every pair of deformed sites is at least ``m_min`` apart."""
    if not m_min > 0:
        raise InvalidParameterError(f"m_min must be positive, got {m_min}")
    u = _as_displacement(lat, u)
    r = np.linalg.norm(lat.pair_vectors(lat.positions + u.values), axis=-1)
    np.fill_diagonal(r, np.inf)
    return bool(np.min(r) >= m_min)


def make_perturbation(
    lat: SupercellLattice,
    profile: Literal["localized", "global"],
    target_norm: float,
    norm_kind: Literal["l2_upsilon", "max"],
    decay_exponent: float = 2.0,
    seed: int = 0,
    *,
    upsilon: float = DEFAULT_UPSILON,
    center: Optional[int] = None,
    max_resamples: int = MAX_RESAMPLES,
) -> Displacement:
    """Draw a seeded random displacement and rescale it to a prescribed norm.

    ``localized`` fields have random unit directions with magnitude
    ``(1 + |l - l_c|)^(-decay_exponent)`` around ``center`` (default: the
    site nearest the origin); ``global`` fields have random directions with
    constant magnitude.  Draws that violate admissibility with
    ``m_min = spacing / 2`` are resampled.
    """
    if not target_norm > 0:
        raise InvalidParameterError(f"target_norm must be positive, got {target_norm}")
    if profile not in ("localized", "global"):
        raise InvalidParameterError(f"unknown perturbation profile {profile!r}")
    if norm_kind not in ("l2_upsilon", "max"):
        raise InvalidParameterError(f"unknown norm kind {norm_kind!r}")
    if profile == "localized" and not decay_exponent > lat.d:
        raise InvalidParameterError(
            f"localized profile needs decay exponent > d = {lat.d}, got {decay_exponent}"
        )
    if center is None:
        center = lat.nearest_site(np.zeros(lat.d))
    center = _check_index(lat, center)

    if profile == "localized":
        envelope = (1.0 + lat.distance_matrix[center]) ** (-decay_exponent)
    else:
        envelope = np.ones(lat.n_sites)

    def norm(v):
        if norm_kind == "max":
            return strain_norm_max(lat, v)
        return strain_seminorm_l2(lat, v, upsilon)

    rng = np.random.default_rng(seed)
    m_min = lat.spacing / 2
    for _ in range(max_resamples):
        directions = rng.standard_normal((lat.n_sites, lat.d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        raw = Displacement(directions * envelope[:, None])
        n = norm(raw)
        if n == 0:
            continue
        u = raw * (target_norm / n)
        if is_admissible(lat, u, m_min):
            return u
    raise PerturbationTooLargeError(
        f"no admissible {profile} perturbation with {norm_kind} norm {target_norm} "
        f"after {max_resamples} draws"
    )
