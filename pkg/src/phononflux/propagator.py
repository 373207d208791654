"""Exact spectral time evolution on the periodic torus.

The Fourier propagator is assembled from matrix functions of ``Omega`` built
out of cluster projections, with ``sin(Omega t) Omega^-1`` taken as a matrix
sinc so that zero frequencies need no special casing.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import GridMismatchError, NumericalError
from .grid import TorusGrid, real_part, to_fourier, to_real
from .lattice import DispersionData, InteractionMatrix, dispersion


@dataclass(frozen=True, eq=False)
class FieldState:
    """Displacement ``u`` and velocity ``v`` on an ``L^d`` torus, each shaped ``(*grid, n)``."""

    grid: TorusGrid
    u: np.ndarray
    v: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        if self.u.shape != self.v.shape:
            raise ValueError("u and v must have the same shape")
        if self.u.shape[:-1] != self.grid.shape:
            raise GridMismatchError(f"field shape {self.u.shape} does not fit {self.grid}")

    @property
    def n(self) -> int:
        return self.u.shape[-1]

    @classmethod
    def zeros(cls, grid: TorusGrid, n: int = 1) -> "FieldState":
        z = np.zeros(grid.shape + (n,))
        return cls(grid, z, z.copy())

    def stacked(self) -> np.ndarray:
        """``Y = (u, v)`` as one array of shape ``(*grid, 2n)``."""
        return np.concatenate([self.u, self.v], axis=-1)

    @classmethod
    def from_stacked(cls, grid: TorusGrid, Y: np.ndarray, time: float = 0.0) -> "FieldState":
        n = Y.shape[-1] // 2
        return cls(grid, np.ascontiguousarray(Y[..., :n]), np.ascontiguousarray(Y[..., n:]), time)

    def swapped(self) -> "FieldState":
        return replace(self, u=self.v, v=self.u)

    def at(self, x) -> np.ndarray:
        """``Y(x)`` as a ``2n`` vector."""
        idx = self.grid.index(x)
        return np.concatenate([self.u[idx], self.v[idx]])


def write_field_csv(path, Y: FieldState):
    """Snapshot CSV with columns ``x_1..x_d, component, u, v``."""
    d = Y.grid.d
    sites = Y.grid.sites.reshape(-1, d)
    u = Y.u.reshape(-1, Y.n)
    v = Y.v.reshape(-1, Y.n)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x_{k + 1}" for k in range(d)] + ["component", "u", "v"])
        for p in range(sites.shape[0]):
            for c in range(Y.n):
                w.writerow([*sites[p].tolist(), c, repr(float(u[p, c])), repr(float(v[p, c]))])


@dataclass(frozen=True, eq=False)
class PropagatorSymbol:
    """``G^_t(theta)`` per node as a ``(*grid, 2n, 2n)`` complex array."""

    grid: TorusGrid
    t: float
    G: np.ndarray

    @property
    def blocks(self):
        n = self.G.shape[-1] // 2
        return self.G[..., :n, :n], self.G[..., :n, n:], self.G[..., n:, :n], self.G[..., n:, n:]

    def adjoint(self) -> np.ndarray:
        return np.conj(np.swapaxes(self.G, -1, -2))


def _sinc_values(omega: np.ndarray, t: float) -> np.ndarray:
    # sin(w t)/w extended continuously by t at w = 0
    wt = omega * t
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(omega > 0, np.sin(wt) / np.where(omega > 0, omega, 1.0), t)


def _propagator_blocks(data: DispersionData, t: float):
    w = data.omega
    c = data.funm(np.cos(w * t))
    s = data.funm(_sinc_values(w, t))
    ws = data.funm(-w * np.sin(w * t))
    return c, s, ws


def propagator_symbol(data: DispersionData, t: float) -> PropagatorSymbol:
    """``[[cos Wt, sin Wt W^-1], [-sin Wt W, cos Wt]]`` at every node."""
    c, s, ws = _propagator_blocks(data, t)
    G = np.block([[c, s], [ws, c]]) if c.ndim == 2 else np.concatenate(
        [np.concatenate([c, s], axis=-1), np.concatenate([ws, c], axis=-1)], axis=-2)
    return PropagatorSymbol(data.grid, float(t), G)


def _apply_symbol(Yh: np.ndarray, blocks, n: int) -> np.ndarray:
    c, s, ws = blocks
    uh, vh = Yh[..., :n], Yh[..., n:]
    mv = lambda M, x: np.einsum("...ij,...j->...i", M, x)  # noqa: E731
    return np.concatenate([mv(c, uh) + mv(s, vh), mv(ws, uh) + mv(c, vh)], axis=-1)


def evolve_array(Y: np.ndarray, data: DispersionData, t: float, lead: int = 0) -> np.ndarray:
    """Evolve stacked fields of shape ``(*batch, *grid, 2n)`` with ``lead`` batch axes."""
    if not np.all(np.isfinite(Y)):
        raise NumericalError("non-finite entries in the initial state")
    if Y.shape[lead:lead + data.d] != data.grid.shape:
        raise GridMismatchError(f"state grid {Y.shape[lead:lead + data.d]} does not match {data.grid.shape}")
    if t == 0:
        return Y.copy()
    Yh = to_fourier(Y, data.grid, lead)
    out = _apply_symbol(Yh, _propagator_blocks(data, t), data.n)
    return real_part(to_real(out, data.grid, lead), "evolved field")


def _data_for(V: InteractionMatrix | DispersionData, grid: TorusGrid) -> DispersionData:
    if isinstance(V, DispersionData):
        grid.check_same(V.grid, "dispersion grid")
        return V
    return dispersion(V, grid)


def evolve(Y0: FieldState, V: InteractionMatrix | DispersionData, t: float, *, warn_horizon: bool = True) -> FieldState:
    """Exact solution ``Y(t) = G_t * Y0`` on the torus; ``V`` may be precomputed dispersion data."""
    data = _data_for(V, Y0.grid)
    if Y0.n != data.n:
        raise GridMismatchError(f"field has {Y0.n} components, model has {data.n}")
    if warn_horizon and abs(t) > data.horizon():
        warnings.warn(f"t={t} exceeds the no-wraparound horizon {data.horizon():.3g}", RuntimeWarning, stacklevel=2)
    Y = evolve_array(Y0.stacked(), data, t)
    return FieldState.from_stacked(Y0.grid, Y, Y0.time + t)


def evolve_conjugate(Psi: FieldState, V, t: float) -> FieldState:
    """Conjugate flow ``F^-1[G^*_t Psi^]``: the propagator adjoint equals a component swap of ``G_t``."""
    out = evolve(Psi.swapped(), V, t, warn_horizon=False).swapped()
    return replace(out, time=Psi.time + t)


def green_function(data: DispersionData, t: float, window_radius: int) -> dict[tuple[int, ...], np.ndarray]:
    """Real-space Green matrices ``G_t(z)`` for ``||z||_inf <= window_radius``."""
    N = data.grid.N
    if window_radius >= N // 2:
        raise ValueError(f"window radius {window_radius} must be below N/2 = {N // 2}")
    G = real_part(to_real(propagator_symbol(data, t).G, data.grid), "Green function")
    rng = range(-window_radius, window_radius + 1)
    out = {}
    for z in np.ndindex(*([len(rng)] * data.d)):
        zz = tuple(r - window_radius for r in z)
        out[zz] = G[data.grid.index(zz)]
    return out


def green_function_full(data: DispersionData, t: float) -> np.ndarray:
    """Green function on the whole torus, shape ``(*grid, 2n, 2n)``."""
    return real_part(to_real(propagator_symbol(data, t).G, data.grid), "Green function")


def hamiltonian(Y: FieldState, V: InteractionMatrix) -> float:
    """``H = 1/2 sum |v|^2 + 1/2 sum (V(x-y) u(y), u(x))`` with periodic wraparound."""
    if Y.grid.d != V.d or Y.n != V.n:
        raise GridMismatchError("field and model shapes differ")
    kinetic = 0.5 * float(np.sum(Y.v**2))
    potential = 0.5 * float(np.sum(V.apply(Y.u) * Y.u))
    return kinetic + potential


def spectral_energy(Y: FieldState, data: DispersionData) -> float:
    """Parseval form of the Hamiltonian, ``1/2 N^-d sum Y^* diag(V^, I) Y^``."""
    uh = to_fourier(Y.u, Y.grid)
    vh = to_fourier(Y.v, Y.grid)
    pot = np.einsum("...i,...ij,...j->...", np.conj(uh), data.vhat, uh)
    kin = np.sum(np.abs(vh) ** 2, axis=-1)
    return 0.5 * float(np.real(np.sum(pot + kin))) / Y.grid.size


def evolve_covariance_spectral(qhat, data: DispersionData, t: float):
    """``Q^_t = G^_t q^ G^_t^*`` nodewise for a translation-invariant density."""
    from .random_fields import SpectralDensity

    data.grid.check_same(qhat.grid, "density grid")
    if t == 0:
        return qhat
    P = propagator_symbol(data, t)
    Q = P.G @ qhat.q @ P.adjoint()
    Q = 0.5 * (Q + np.conj(np.swapaxes(Q, -1, -2)))
    return SpectralDensity(qhat.grid, Q, None, f"{qhat.label}@t={t:g}")
