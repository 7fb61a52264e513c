"""Zero-temperature density matrices, resolvent probes and density-matrix derivatives.

Occupations follow either a Fermi level ``eps_F`` (every state below it is
filled) or a fixed number of filled states ``n_occupied``; when neither is
given the system is half filled, which is the insulating filling of the
two-orbital chain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    ContourError,
    DomainMismatchError,
    FermiLevelInSpectrumError,
    IllConditionedDerivativeError,
    InvalidParameterError,
    NoGapError,
    QuadratureFailureError,
)
from .io import atomic_write_bytes
from .lattice import Displacement, SupercellLattice
from .tightbinding import TBModel, assemble_hamiltonian, derivative_blocks

__all__ = [
    "DensityMatrix",
    "Contour",
    "default_contour",
    "density_matrix_spectral",
    "density_matrix_contour",
    "resolvent_decay_profile",
    "density_derivative_analytic",
    "density_derivative_blocks",
    "density_derivative_fd",
    "density_derivative_contour",
    "total_energy",
    "site_force",
    "all_forces",
    "export_density_matrix",
    "read_density_matrix",
    "FERMI_TOL",
    "DEGENERACY_TOL",
    "MAX_QUADRATURE_POINTS",
]

FERMI_TOL = 1e-8
DEGENERACY_TOL = 1e-12
MAX_QUADRATURE_POINTS = 2**14


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray
    eps_F: float
    n_occupied: int

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))

    def idempotency_error(self) -> float:
        return float(np.linalg.norm(self.matrix @ self.matrix - self.matrix))

    def commutator_norm(self, H) -> float:
        H = np.asarray(H)
        return float(np.linalg.norm(self.matrix @ H - H @ self.matrix))

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


def _symmetric(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def density_matrix_spectral(H, eps_F: float) -> DensityMatrix:
    """``rho = chi_(-inf, eps_F)(H)`` from a full symmetric eigendecomposition."""
    H = np.asarray(H, dtype=float)
    w, V = np.linalg.eigh(H)
    gap = np.min(np.abs(w - eps_F))
    if gap < FERMI_TOL:
        raise FermiLevelInSpectrumError(f"eps_F = {eps_F} lies within {gap:.3g} of an eigenvalue")
    occ = V[:, w < eps_F]
    return DensityMatrix(_symmetric(occ @ occ.T), float(eps_F), int(occ.shape[1]))


@dataclass(frozen=True)
class Contour:
    """Circle ``center + radius * exp(i theta)`` sampled at ``n_points`` nodes."""

    center: complex
    radius: float
    n_points: int = 64

    def nodes(self, n: Optional[int] = None) -> np.ndarray:
        n = self.n_points if n is None else n
        return self.center + self.radius * np.exp(2j * np.pi * np.arange(n) / n)

    def validate(self, eigenvalues: np.ndarray, eps_F: float) -> None:
        """Raise :class:`ContourError` unless the circle encloses exactly the states below ``eps_F``."""
        dist = np.abs(np.asarray(eigenvalues) - self.center)
        inside = dist < self.radius
        if np.any(inside != (np.asarray(eigenvalues) < eps_F)):
            raise ContourError("contour does not separate occupied from unoccupied states")
        if np.min(np.abs(dist - self.radius)) < FERMI_TOL:
            raise ContourError("contour passes through the spectrum")


def default_contour(H, eps_F: float, gap_minus: Optional[float] = None, n_points: int = 64) -> Contour:
    """Circle through ``min sigma(H) - margin`` and ``eps_F + margin`` with ``margin = gap_minus / 4``.

    ``gap_minus`` defaults to the spectral gap of ``H`` around ``eps_F``.
    """
    w = np.linalg.eigvalsh(np.asarray(H, dtype=float))
    below, above = w[w < eps_F], w[w > eps_F]
    if below.size == 0 or above.size == 0:
        raise ContourError("eps_F must lie strictly inside the spectrum range")
    if gap_minus is None:
        gap_minus = above.min() - below.max()
    lo = w.min()
    return Contour(complex(0.5 * (lo + eps_F)), 0.5 * (eps_F - lo) + 0.25 * gap_minus, n_points)


def _resolvent(H: np.ndarray, z: complex) -> np.ndarray:
    n = H.shape[0]
    return np.linalg.solve(z * np.eye(n) - H, np.eye(n, dtype=complex))


def density_matrix_contour(H, contour: Contour, *, eps_F: Optional[float] = None, tol: float = 1e-10,
                           max_points: int = MAX_QUADRATURE_POINTS,
                           use_symmetry: bool = True) -> DensityMatrix:
    """Trapezoidal quadrature of ``(1 / 2 pi i) \\oint (z - H)^{-1} dz`` over a circle.

    The node count doubles from ``contour.n_points`` until successive
    estimates differ by less than ``tol`` in Frobenius norm.  For real ``H``
    the resolvent at ``conj(z)`` is the conjugate of the one at ``z``, so with
    ``use_symmetry`` only the upper half circle is solved and the imaginary
    part cancels exactly; otherwise all nodes are solved and the discarded
    imaginary residue is checked.
    """
    H = np.asarray(H, dtype=float)
    w = np.linalg.eigvalsh(H)
    eps_F = float(contour.center.real + contour.radius) if eps_F is None else float(eps_F)
    contour.validate(w, eps_F)
    n = int(contour.n_points)
    if n < 4 or n % 2:
        raise InvalidParameterError(f"n_points must be even and >= 4, got {n}")
    c, R = contour.center, contour.radius

    def term(theta):
        z = c + R * np.exp(1j * theta)
        return _resolvent(H, z) * (z - c)

    def accumulate(thetas):
        re = np.zeros_like(H)
        im = np.zeros_like(H)
        for t in thetas:
            x = term(t)
            if use_symmetry and 0 < t < np.pi:
                re += 2 * x.real
            else:
                re += x.real
                im += x.imag
        return re, im

    def initial_nodes(m):
        th = 2 * np.pi * np.arange(m) / m
        return th[th <= np.pi + 1e-12] if use_symmetry else th

    re, im = accumulate(initial_nodes(n))
    rho = re / n
    while True:
        if 2 * n > max_points:
            raise QuadratureFailureError(f"contour quadrature did not converge within {max_points} nodes")
        new = 2 * np.pi * (2 * np.arange(n) + 1) / (2 * n)
        if use_symmetry:
            new = new[new < np.pi]
        dre, dim_ = accumulate(new)
        re, im = re + dre, im + dim_
        n *= 2
        rho_new = re / n
        if np.linalg.norm(rho_new - rho) < tol:
            rho = rho_new
            break
        rho = rho_new
    residue = np.linalg.norm(im / n)
    if residue > tol:
        raise QuadratureFailureError(f"imaginary residue {residue:.3g} exceeds {tol}")
    rho = _symmetric(rho)
    return DensityMatrix(rho, eps_F, int(round(np.trace(rho))))


def resolvent_decay_profile(H, lat: SupercellLattice, z: complex, reference=None):
    """Decay profile of ``|(z - H)^{-1}|`` (max over orbital pairs per distance class)."""
    from .locality import decay_profile

    H = np.asarray(H, dtype=float)
    w = np.linalg.eigvalsh(H)
    d = float(np.min(np.abs(w - z)))
    if d < FERMI_TOL:
        raise FermiLevelInSpectrumError(f"z = {z} lies within {d:.3g} of the spectrum")
    X = _resolvent(H, z)
    p = decay_profile(np.abs(X), lat, reference)
    p.metadata.update({"z_real": float(np.real(z)), "z_imag": float(np.imag(z)), "dist_to_spectrum": d})
    return p


# --- configurations and occupations --------------------------------------------------


@dataclass(frozen=True, eq=False)
class _State:
    w: np.ndarray
    V: np.ndarray
    n_occ: int
    H: np.ndarray

    @property
    def rho(self) -> np.ndarray:
        occ = self.V[:, : self.n_occ]
        return _symmetric(occ @ occ.T)

    @property
    def gap(self) -> float:
        return float(self.w[self.n_occ] - self.w[self.n_occ - 1])


def _n_filled(w: np.ndarray, eps_F: Optional[float], n_occupied: Optional[int]) -> int:
    if eps_F is not None and n_occupied is not None:
        raise InvalidParameterError("give either eps_F or n_occupied, not both")
    if eps_F is not None:
        if np.min(np.abs(w - eps_F)) < FERMI_TOL:
            raise FermiLevelInSpectrumError(f"eps_F = {eps_F} lies in the spectrum")
        return int(np.sum(w < eps_F))
    n = len(w) // 2 if n_occupied is None else int(n_occupied)
    if not 0 < n < len(w):
        raise InvalidParameterError(f"n_occupied must be in (0, {len(w)}), got {n}")
    return n


def _state(model, lat, u, eps_F=None, n_occupied=None) -> _State:
    H = assemble_hamiltonian(model, lat, u).matrix
    w, V = np.linalg.eigh(H)
    n = _n_filled(w, eps_F, n_occupied)
    if not 0 < n < len(w):
        raise NoGapError("no states on one side of the Fermi level")
    st = _State(w, V, n, H)
    if st.gap < DEGENERACY_TOL:
        raise NoGapError(f"gap between filled and empty states is {st.gap:.3g}")
    return st


def _block_rows(site: int, nb: int) -> slice:
    return slice(site * nb, (site + 1) * nb)


def density_derivative_blocks(model: TBModel, lat: SupercellLattice, u: Optional[Displacement],
                              observe_site: int, probes: Iterable[Tuple[int, int]], *,
                              eps_F: Optional[float] = None,
                              n_occupied: Optional[int] = None) -> np.ndarray:
    """``d rho_{ll} / d[u(k)]_j`` for every probe ``(k, j)``, sharing one eigendecomposition.

    First-order perturbation theory in the eigenbasis::

        d rho = sum_{i occ, j empty} <v_i|dH|v_j> / (e_i - e_j) (v_i v_j^T + v_j v_i^T)

    Returns an array of shape ``(n_probes, n_orb, n_orb)``.
    """
    st = _state(model, lat, u, eps_F, n_occupied)
    if st.gap < DEGENERACY_TOL:
        raise IllConditionedDerivativeError(f"occupied/empty gap {st.gap:.3g} below {DEGENERACY_TOL}")
    nb = model.n_orb
    if not 0 <= observe_site < lat.n_sites:
        raise DomainMismatchError(f"observe site {observe_site} out of range")
    Vo, Vu = st.V[:, : st.n_occ], st.V[:, st.n_occ:]
    X = 1.0 / (st.w[: st.n_occ, None] - st.w[None, st.n_occ:])
    lo, lu = Vo[_block_rows(observe_site, nb)], Vu[_block_rows(observe_site, nb)]
    out = []
    for site, axis in probes:
        K = np.zeros_like(X)
        for l, k, B in derivative_blocks(model, lat, u, site, axis):
            K += Vo[_block_rows(l, nb)].T @ B @ Vu[_block_rows(k, nb)]
        blk = lo @ (K * X) @ lu.T
        out.append(blk + blk.T)
    return np.array(out).reshape(-1, nb, nb)


def density_derivative_analytic(model: TBModel, lat: SupercellLattice, u: Optional[Displacement],
                                probe_site: int, direction: int, observe_site: int, *,
                                eps_F: Optional[float] = None,
                                n_occupied: Optional[int] = None) -> np.ndarray:
    """``d rho_{ll} / d[u(k)]_j`` as an ``n_orb x n_orb`` block."""
    return density_derivative_blocks(model, lat, u, observe_site, [(probe_site, direction)],
                                     eps_F=eps_F, n_occupied=n_occupied)[0]


def density_derivative_fd(model: TBModel, lat: SupercellLattice, u: Optional[Displacement],
                          probe_site: int, direction: int, observe_site: int, step: float, *,
                          eps_F: Optional[float] = None,
                          n_occupied: Optional[int] = None) -> np.ndarray:
    """Central difference ``(rho(u + h e) - rho(u - h e)) / 2h`` of the ``(l, l)`` block."""
    if not step > 0:
        raise InvalidParameterError(f"step must be positive, got {step}")
    u = Displacement.zeros(lat) if u is None else u
    if n_occupied is None and eps_F is None:
        n_occupied = _state(model, lat, u).n_occ
    s = _block_rows(observe_site, model.n_orb)
    blocks = []
    for sign in (1.0, -1.0):
        st = _state(model, lat, u.moved(probe_site, direction, sign * step), eps_F, n_occupied)
        blocks.append(st.rho[s, s])
    return (blocks[0] - blocks[1]) / (2 * step)


def density_derivative_contour(H, dH, contour: Contour, n_points: Optional[int] = None) -> np.ndarray:
    """Fixed-node quadrature of ``(1 / 2 pi i) \\oint (z - H)^{-1} dH (z - H)^{-1} dz``."""
    H, dH = np.asarray(H, dtype=float), np.asarray(dH, dtype=float)
    n = contour.n_points if n_points is None else n_points
    c = contour.center
    acc = np.zeros_like(H, dtype=complex)
    for z in contour.nodes(n):
        Rz = _resolvent(H, z)
        acc += Rz @ dH @ Rz * (z - c)
    return _symmetric((acc / n).real)


def total_energy(model: TBModel, lat: SupercellLattice, u: Optional[Displacement] = None, *,
                 eps_F: Optional[float] = None, n_occupied: Optional[int] = None) -> float:
    """Band energy ``Tr(rho H)``, the sum of the filled eigenvalues."""
    st = _state(model, lat, u, eps_F, n_occupied)
    return float(np.sum(st.w[: st.n_occ]))


def _force(model, lat, u, st: _State, site: int) -> np.ndarray:
    nb = model.n_orb
    rho = st.rho
    f = np.zeros(lat.d)
    for axis in range(lat.d):
        tr = 0.0
        for l, k, B in derivative_blocks(model, lat, u, site, axis):
            tr += float(np.sum(rho[_block_rows(l, nb), _block_rows(k, nb)] * B))
        f[axis] = -tr
    return f


def site_force(model: TBModel, lat: SupercellLattice, u: Optional[Displacement], site: int, *,
               eps_F: Optional[float] = None, n_occupied: Optional[int] = None) -> np.ndarray:
    """Hellmann-Feynman force ``-Tr(rho dH / du(site))``."""
    if not 0 <= site < lat.n_sites:
        raise DomainMismatchError(f"site {site} out of range")
    st = _state(model, lat, u, eps_F, n_occupied)
    return _force(model, lat, u, st, site)


def all_forces(model: TBModel, lat: SupercellLattice, u: Optional[Displacement] = None, *,
               eps_F: Optional[float] = None, n_occupied: Optional[int] = None) -> np.ndarray:
    """Forces on every site, shape ``(n_sites, d)``."""
    st = _state(model, lat, u, eps_F, n_occupied)
    return np.array([_force(model, lat, u, st, i) for i in range(lat.n_sites)])


def export_density_matrix(dm: DensityMatrix, path) -> Path:
    """Write a one-line JSON header followed by the matrix as column-major little-endian float64."""
    header = {"dim": dm.dim, "eps_F": dm.eps_F, "trace": dm.trace, "n_occupied": dm.n_occupied,
              "dtype": "<f8", "order": "F"}
    data = json.dumps(header, sort_keys=True).encode() + b"\n"
    data += np.asarray(dm.matrix, dtype="<f8").tobytes(order="F")
    return atomic_write_bytes(path, data)


def read_density_matrix(path) -> DensityMatrix:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        raw = fh.read()
    n = int(header["dim"])
    m = np.frombuffer(raw, dtype="<f8", count=n * n).reshape((n, n), order="F")
    return DensityMatrix(m, float(header["eps_F"]), int(header["n_occupied"]))
