"""Linear tight-binding models and Hamiltonian assembly.

The Hamiltonian of a configuration ``x_l = l + u(l)`` is built blockwise::

    H_lk = h(x_l - x_k, z_l, z_k)                       (l != k, |x_l - x_k| <= cutoff)
    H_ll = onsite(z_l) + sum_{m != l} t(x_l - x_m, z_l, z_m)

with ``N_b x N_b`` real blocks.  Bond vectors use the minimum image of the
periodic supercell, so the cutoff must stay below half the supercell width.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import AdmissibilityError, DomainMismatchError, InvalidParameterError
from .lattice import Displacement, SupercellLattice, _as_displacement, is_admissible

__all__ = [
    "ToyChainParams",
    "TBModel",
    "Hamiltonian",
    "toy_model",
    "assemble_hamiltonian",
    "derivative_blocks",
    "hamiltonian_derivative",
    "verify_tb_assumptions",
    "decay_amplitude",
    "TRUNCATION_TOL",
]

# hoppings below this amplitude are dropped when no explicit cutoff is given
TRUNCATION_TOL = 1e-14

BlockFn = Callable[[np.ndarray, int, int], np.ndarray]


@dataclass(frozen=True)
class ToyChainParams:
    """Parameters of the two-orbital chain.

    On-site block ``diag(c1, c2)``; bond block ``[[f1, f3], [f3, f2]]`` with
    ``f_i(r) = (b_i r + a_i) exp(-d_i r^2)``.
    """

    c1: float
    c2: float
    a: Tuple[float, float, float]
    b: Tuple[float, float, float]
    d: Tuple[float, float, float] = (0.5, 0.5, 0.5)

    def __post_init__(self):
        for name in ("a", "b", "d"):
            vals = tuple(float(x) for x in getattr(self, name))
            if len(vals) != 3:
                raise InvalidParameterError(f"{name} needs three entries, got {len(vals)}")
            object.__setattr__(self, name, vals)
        object.__setattr__(self, "c1", float(self.c1))
        object.__setattr__(self, "c2", float(self.c2))
        if min(self.d) <= 0:
            raise InvalidParameterError(f"Gaussian exponents must be positive, got d = {self.d}")

    def f(self, i: int, r):
        """Hopping function ``f_{i+1}`` (``i`` is zero based)."""
        r = np.asarray(r, dtype=float)
        return (self.b[i] * r + self.a[i]) * np.exp(-self.d[i] * r * r)

    def df(self, i: int, r):
        r = np.asarray(r, dtype=float)
        a, b, d = self.a[i], self.b[i], self.d[i]
        return (b - 2 * d * r * (b * r + a)) * np.exp(-d * r * r)

    def at_unit_bond(self) -> Tuple[float, float, float]:
        """``(f1(1), f2(1), f3(1))``."""
        return tuple(float(self.f(i, 1.0)) for i in range(3))

    def as_dict(self) -> dict:
        return {"c1": self.c1, "c2": self.c2, "a": list(self.a), "b": list(self.b), "d": list(self.d)}


def _fd_grad(fn: BlockFn, r: np.ndarray, zl: int, zk: int, step: float = 1e-6) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    out = []
    for j in range(len(r)):
        e = np.zeros_like(r)
        e[j] = step
        out.append((np.asarray(fn(r + e, zl, zk)) - np.asarray(fn(r - e, zl, zk))) / (2 * step))
    return np.array(out)


@dataclass(frozen=True, eq=False)
class TBModel:
    """A tight-binding model satisfying the exponential-decay assumption.

    ``hopping(r, z_l, z_k)`` and ``onsite_env(r, z_l, z_k)`` return real
    ``n_orb x n_orb`` blocks for a bond vector ``r = x_l - x_k``; their
    gradients (shape ``(d, n_orb, n_orb)``) default to central differences.
    ``h0`` and ``gamma0`` bound ``|h| + |grad h| <= h0 exp(-gamma0 r)``.
    """

    n_orb: int
    hopping: BlockFn
    onsite: Callable[[int], np.ndarray]
    cutoff: float
    h0: float
    gamma0: float
    onsite_env: Optional[BlockFn] = None
    hopping_grad: Optional[BlockFn] = None
    onsite_env_grad: Optional[BlockFn] = None
    params: Optional[ToyChainParams] = field(default=None, compare=False)

    def hop(self, r, zl=0, zk=0) -> np.ndarray:
        return np.asarray(self.hopping(np.atleast_1d(np.asarray(r, dtype=float)), zl, zk), dtype=float)

    def hop_grad(self, r, zl=0, zk=0) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if self.hopping_grad is not None:
            return np.asarray(self.hopping_grad(r, zl, zk), dtype=float)
        return _fd_grad(self.hopping, r, zl, zk)

    def env(self, r, zl=0, zk=0) -> np.ndarray:
        return np.asarray(self.onsite_env(np.atleast_1d(np.asarray(r, dtype=float)), zl, zk), dtype=float)

    def env_grad(self, r, zl=0, zk=0) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if self.onsite_env_grad is not None:
            return np.asarray(self.onsite_env_grad(r, zl, zk), dtype=float)
        return _fd_grad(self.onsite_env, r, zl, zk)


def decay_amplitude(params: ToyChainParams, gamma0: float, r_max: float = 60.0) -> float:
    """Smallest ``h0`` with ``|f_i| + |f_i'| <= h0 exp(-gamma0 r)`` for all ``i`` and ``r >= 0``."""
    r = np.linspace(0.0, r_max, 60001)

    def g(i, x):
        return (np.abs(params.f(i, x)) + np.abs(params.df(i, x))) * np.exp(gamma0 * x)

    best = 0.0
    for i in range(3):
        vals = g(i, r)
        j = int(np.argmax(vals))
        lo, hi = r[max(j - 1, 0)], r[min(j + 1, len(r) - 1)]
        res = minimize_scalar(lambda x: -g(i, x), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        best = max(best, float(vals[j]), float(-res.fun))
    return best * (1 + 1e-9)


def toy_model(params: ToyChainParams, nn_only: bool = True, *, spacing: float = 1.0,
              gamma0: float = 1.0) -> TBModel:
    """Two-orbital chain model; ``nn_only`` restricts hopping to nearest neighbours."""
    if not isinstance(params, ToyChainParams):
        raise InvalidParameterError("toy_model expects ToyChainParams")
    h0 = decay_amplitude(params, gamma0)
    if nn_only:
        cutoff = 1.5 * spacing
    else:
        cutoff = max(np.log(max(h0, 1.0) / TRUNCATION_TOL) / gamma0, 1.5 * spacing)
    onsite_block = np.diag([params.c1, params.c2])

    def hopping(r, zl=0, zk=0):
        rr = float(np.linalg.norm(r))
        f1, f2, f3 = (float(params.f(i, rr)) for i in range(3))
        return np.array([[f1, f3], [f3, f2]])

    def hopping_grad(r, zl=0, zk=0):
        r = np.asarray(r, dtype=float)
        rr = float(np.linalg.norm(r))
        g1, g2, g3 = (float(params.df(i, rr)) for i in range(3))
        blk = np.array([[g1, g3], [g3, g2]])
        return (r / rr)[:, None, None] * blk[None, :, :]

    return TBModel(
        n_orb=2,
        hopping=hopping,
        onsite=lambda z=0: onsite_block,
        cutoff=float(cutoff),
        h0=float(h0),
        gamma0=float(gamma0),
        hopping_grad=hopping_grad,
        params=params,
    )


@dataclass(frozen=True, eq=False)
class Hamiltonian:
    """Dense real-symmetric Hamiltonian indexed by ``(site, orbital)`` in lattice order."""

    matrix: np.ndarray
    n_orb: int

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_sites(self) -> int:
        return self.dim // self.n_orb

    def block(self, l: int, k: int) -> np.ndarray:
        nb = self.n_orb
        return self.matrix[l * nb:(l + 1) * nb, k * nb:(k + 1) * nb]

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


def _configuration(model: TBModel, lat: SupercellLattice, u, m_min: Optional[float]):
    u = _as_displacement(lat, u)
    if model.cutoff >= lat.period / 2:
        raise DomainMismatchError(
            f"cutoff {model.cutoff} needs a supercell wider than {2 * model.cutoff}, got {lat.period}"
        )
    m_min = lat.spacing / 2 if m_min is None else m_min
    if not is_admissible(lat, u, m_min):
        raise AdmissibilityError(f"displacement brings two sites closer than {m_min}")
    x = lat.positions + u.values
    R = lat.pair_vectors(x)
    dist = np.linalg.norm(R, axis=-1)
    return R, dist


def _bonds(model, dist) -> Tuple[np.ndarray, np.ndarray]:
    mask = np.triu(dist <= model.cutoff, k=1)
    return np.nonzero(mask)


def assemble_hamiltonian(model: TBModel, lat: SupercellLattice, u: Optional[Displacement] = None,
                         *, m_min: Optional[float] = None) -> Hamiltonian:
    """Dense Hamiltonian of the configuration ``lat.positions + u``.

    ``u`` must be admissible with ``m_min`` (default half the lattice spacing).
    """
    R, dist = _configuration(model, lat, u, m_min)
    nb, n = model.n_orb, lat.n_sites
    z = lat.species
    H = np.zeros((n * nb, n * nb))
    for l in range(n):
        H[l * nb:(l + 1) * nb, l * nb:(l + 1) * nb] = model.onsite(int(z[l]))
    ls, ks = _bonds(model, dist)
    for l, k in zip(ls, ks):
        blk = model.hop(R[l, k], z[l], z[k])
        H[l * nb:(l + 1) * nb, k * nb:(k + 1) * nb] = blk
        H[k * nb:(k + 1) * nb, l * nb:(l + 1) * nb] = blk.T
    if model.onsite_env is not None:
        for l, k in zip(ls, ks):
            H[l * nb:(l + 1) * nb, l * nb:(l + 1) * nb] += model.env(R[l, k], z[l], z[k])
            H[k * nb:(k + 1) * nb, k * nb:(k + 1) * nb] += model.env(R[k, l], z[k], z[l])
        for l in range(n):
            s = slice(l * nb, (l + 1) * nb)
            H[s, s] = 0.5 * (H[s, s] + H[s, s].T)
    return Hamiltonian(H, nb)


def derivative_blocks(model: TBModel, lat: SupercellLattice, u: Optional[Displacement], site: int,
                      axis: int, *, m_min: Optional[float] = None) -> List[Tuple[int, int, np.ndarray]]:
    """Nonzero blocks ``(row_site, col_site, block)`` of ``dH / d[u(site)]_axis``."""
    if not 0 <= axis < lat.d:
        raise DomainMismatchError(f"axis {axis} out of range for d = {lat.d}")
    if not 0 <= site < lat.n_sites:
        raise DomainMismatchError(f"site {site} out of range")
    R, dist = _configuration(model, lat, u, m_min)
    z = lat.species
    out = []
    diag = np.zeros((model.n_orb, model.n_orb))
    for k in np.nonzero((dist[site] <= model.cutoff) & (np.arange(lat.n_sites) != site))[0]:
        # r_{site,k} = x_site - x_k moves with +u(site)
        g = model.hop_grad(R[site, k], z[site], z[k])[axis]
        out.append((site, int(k), g))
        out.append((int(k), site, g.T))
        if model.onsite_env is not None:
            diag += model.env_grad(R[site, k], z[site], z[k])[axis]
            gk = -model.env_grad(R[k, site], z[k], z[site])[axis]
            out.append((int(k), int(k), 0.5 * (gk + gk.T)))
    if model.onsite_env is not None:
        out.append((site, site, 0.5 * (diag + diag.T)))
    return out


def hamiltonian_derivative(model: TBModel, lat: SupercellLattice, u: Optional[Displacement], site: int,
                           axis: int, *, m_min: Optional[float] = None) -> np.ndarray:
    """Dense ``dH / d[u(site)]_axis``."""
    nb = model.n_orb
    D = np.zeros((lat.n_sites * nb, lat.n_sites * nb))
    for l, k, blk in derivative_blocks(model, lat, u, site, axis, m_min=m_min):
        D[l * nb:(l + 1) * nb, k * nb:(k + 1) * nb] += blk
    return D


def verify_tb_assumptions(model: TBModel, radius_grid: Sequence[float], *, dim: int = 1,
                          species: Sequence[int] = (0,)) -> dict:
    """Largest violations of the decay bound and bond symmetry over a radius grid.

    Returns a dict with ``max_violation_decay`` (``|h^{ab}(r)| - h0 e^{-gamma0 r}``),
    ``max_violation_gradient`` (same with ``|h| + |grad h|``, the full assumption)
    and ``max_violation_symmetry`` (``|h^{ab}(r, z, z') - h^{ba}(-r, z', z)|``).
    Nonpositive values mean the assumption holds on the grid.
    """
    radii = np.asarray(radius_grid, dtype=float)
    if radii.size == 0:
        raise InvalidParameterError("radius grid is empty")
    directions = [np.eye(dim)[j] for j in range(dim)]
    if dim > 1:
        directions.append(np.ones(dim) / np.sqrt(dim))
    fns = [(model.hop, model.hop_grad)]
    if model.onsite_env is not None:
        fns.append((model.env, model.env_grad))
    decay = grad = sym = -np.inf
    for rr in radii:
        bound = model.h0 * np.exp(-model.gamma0 * rr)
        for e in directions:
            r = rr * e
            for zl in species:
                for zk in species:
                    for val, gradf in fns:
                        v = np.abs(val(r, zl, zk))
                        decay = max(decay, float(np.max(v - bound)))
                        if rr > 0:
                            gn = np.linalg.norm(gradf(r, zl, zk), axis=0)
                            grad = max(grad, float(np.max(v + gn - bound)))
                    sym = max(sym, float(np.max(np.abs(model.hop(r, zl, zk) - model.hop(-r, zk, zl).T))))
    return {"max_violation_decay": decay, "max_violation_gradient": grad, "max_violation_symmetry": sym}
