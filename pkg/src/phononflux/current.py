"""Local energy-current densities, mean currents and the limiting heat flux."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import CovarianceEstimate, LimitCovariance, _data_for, _site, evolved_ensemble
from .errors import NumericalError
from .grid import TorusGrid
from .lattice import DispersionData, InteractionMatrix, symbol_gradient
from .propagator import FieldState
from .stats import jackknife


@dataclass(frozen=True)
class CurrentEstimate:
    """Energy current in direction ``k`` (1-based) across the plane through ``site``."""

    k: int
    site: tuple[int, ...]
    t: float
    value: float
    stderr: float
    method: str
    horizon_ok: bool = True

    def __post_init__(self):
        if not np.isfinite(self.value) or not self.stderr >= 0:
            raise NumericalError(f"invalid current estimate {self.value} +- {self.stderr}")

    def row(self):
        return [self.method, self.k, self.t, *self.site, self.value, self.stderr, int(self.horizon_ok)]


def _bond_terms(V: InteractionMatrix, k: int):
    """``(sign, m, z, V(z))`` for every term of the plane current in direction ``k`` (0-based).

    The current through the plane between ``x'_k - 1`` and ``x'_k`` is
    ``1/2 sum sign (v(x' + m e_k), V(z) u(x' + m e_k - z))``: couplings that
    reach across from below (``z_k <= -1``, ``m = z_k..-1``) enter with ``+``
    and those from above (``z_k >= 1``, ``m = 0..z_k-1``) with ``-``.
    """
    out = []
    for z, Vz in sorted(V.support.items()):
        s = z[k]
        if s <= -1:
            out += [(1.0, m, z, Vz) for m in range(s, 0)]
        elif s >= 1:
            out += [(-1.0, m, z, Vz) for m in range(0, s)]
    return out


def current_field(Y: np.ndarray, V: InteractionMatrix, k: int, lead: int = 0) -> np.ndarray:
    """``j^k(x')`` at every site for stacked fields ``(*batch, *grid, 2n)``; ``k`` is 1-based."""
    n = V.n
    d = V.d
    axes = tuple(range(lead, lead + d))
    u, v = Y[..., :n], Y[..., n:]
    out = np.zeros(Y.shape[:-1])
    cache = {}
    for sign, m, z, Vz in _bond_terms(V, k - 1):
        if z not in cache:
            # f_z(x) = (v(x), V(z) u(x - z))
            uz = np.roll(u, shift=z, axis=axes)
            cache[z] = np.einsum("...a,ab,...b->...", v, Vz, uz)
        out += sign * np.roll(cache[z], -m, axis=lead + k - 1)
    return 0.5 * out


def local_current(Y: FieldState, V: InteractionMatrix, x, k: int) -> float:
    """Energy current density ``j^k(x')`` for a single state."""
    V.validate()
    return float(current_field(Y.stacked(), V, k)[Y.grid.index(x)])


def region_energy(Y: FieldState, V: InteractionMatrix, k: int, start: int = 0) -> float:
    """Energy of the half space ``start <= x_k < start + N/2`` (signed coordinates).

    Kinetic energy plus half of every pair interaction with the point ``x`` in
    the region, which is the region energy whose rate of change is the plane
    current on a finite torus up to the far boundary.
    """
    grid = Y.grid
    coord = grid.sites[..., k - 1]
    inside = (coord >= start) & (coord < start + grid.N // 2)
    dens = 0.5 * np.sum(Y.v**2, axis=-1) + 0.5 * np.sum(Y.u * V.apply(Y.u), axis=-1)
    return float(np.sum(dens[inside]))


def mean_current_from_covariance(Q: CovarianceEstimate, V: InteractionMatrix, k: int, x) -> CurrentEstimate:
    """``E j^k(x')`` from ``Q^{10}``: ``1/2 sum sign V_ab(z) Q^{10}_ab(x'+m e_k, x'+m e_k - z)``."""
    grid = Q.grid
    x = np.atleast_1d(np.asarray(x, dtype=int))
    value = 0.0
    var = 0.0
    for sign, m, z, Vz in _bond_terms(V, k - 1):
        a = x.copy()
        a[k - 1] += m
        b = a - np.asarray(z)
        if not Q.has(a, b):
            raise KeyError(f"covariance window lacks the pair ({tuple(a)}, {tuple(b)})")
        blk = Q.block(a, b, 1, 0)
        se = Q.block_se(a, b, 1, 0)
        value += 0.5 * sign * float(np.sum(Vz * blk))
        var += float(np.sum((0.5 * Vz * se) ** 2))
    return CurrentEstimate(k, _site(grid, x), Q.t, value, float(np.sqrt(var)), Q.method, Q.horizon_ok)


def current_pairs(V: InteractionMatrix, k: int, x) -> list:
    """Site pairs a covariance window must contain for ``mean_current_from_covariance``."""
    x = np.atleast_1d(np.asarray(x, dtype=int))
    pairs = []
    for _, m, z, _ in _bond_terms(V, k - 1):
        a = x.copy()
        a[k - 1] += m
        pairs.append((tuple(a), tuple(a - np.asarray(z))))
    return pairs


def mc_current(measure, V: InteractionMatrix, t: float, k: int, offsets=(0,), M: int = 1000, seed: int = 0,
               *, average: bool = True, data: DispersionData | None = None, batch: int = 128,
               threads: int = 1) -> list[CurrentEstimate]:
    """Monte Carlo ``E j^k`` at planes ``x'_d = offset``.

    With ``average`` the per-sample current is averaged over every site with
    the given last coordinate, which leaves the mean unchanged because the
    glued measure is invariant under shifts along the seam (and, for
    ``k < d``, along ``e_k``).
    """
    grid: TorusGrid = measure.grid
    data = data if data is not None else _data_for(V, grid)
    offsets = [int(o) for o in offsets]
    idx = [grid.index((0,) * (grid.d - 1) + (o,))[-1] for o in offsets]

    def per_sample(Y):
        J = current_field(Y, V, k, lead=1)
        if average:
            return np.stack([J[..., i].reshape(J.shape[0], -1).mean(axis=1) for i in idx], axis=1)
        return np.stack([J[(slice(None),) + (0,) * (grid.d - 1) + (i,)] for i in idx], axis=1)

    vals = evolved_ensemble(measure, data, t, per_sample, M, seed, batch, threads)
    mean, se = jackknife(vals)
    ok = abs(t) <= data.horizon()
    return [CurrentEstimate(k, (0,) * (grid.d - 1) + (o,), t, float(mu), float(s), "mc", ok)
            for o, mu, s in zip(offsets, mean, se)]


def limit_current(qinf: LimitCovariance, V: InteractionMatrix | DispersionData, tol: float = 1e-9) -> np.ndarray:
    """``j_inf^k = -(i/2) (2 pi)^-d int sum_ab (q^_inf^{10})_ab d_k conj(V^_ab)`` by grid quadrature."""
    if isinstance(V, DispersionData):
        qinf.grid.check_same(V.grid, "dispersion grid")
        dv = V.dvhat
    else:
        dv = symbol_gradient(V, qinf.grid.theta)
    q10 = qinf.block(1, 0)
    d = qinf.grid.d
    n = qinf.n
    raw = -0.5j * np.einsum("pab,pkab->k", q10.reshape(-1, n, n), np.conj(dv).reshape(-1, d, n, n)) / qinf.grid.size
    scale = max(1.0, float(np.max(np.abs(raw))))
    if np.max(np.abs(raw.imag)) > tol * scale:
        raise NumericalError(f"limit current has imaginary residue {np.max(np.abs(raw.imag)):.3e}; "
                             "q_inf^{10} is not Hermitian-consistent")
    return raw.real


def _contract(sgn: np.ndarray, vel: np.ndarray) -> np.ndarray:
    n, d = vel.shape[-2:]
    return np.einsum("pg,pgk->k", sgn.reshape(-1, n), vel.reshape(-1, n, d))


def gibbs_limit_current(data: DispersionData, T_plus: float, T_minus: float) -> np.ndarray:
    """``j_inf^k = -(dT / (2 pi)^d) sum_g int sgn(d omega_g / d theta_d) d omega_g / d theta_k``."""
    dT = 0.5 * (T_plus - T_minus)
    vel = np.nan_to_num(data.velocity)  # (..., n, d)
    sgn = data.sign_d()  # (..., n), zero on the critical mask
    integrand = _contract(sgn, vel)
    return -dT * integrand / data.grid.size


def richardson_check(data: DispersionData, T_plus: float, T_minus: float) -> tuple[np.ndarray, np.ndarray]:
    """Return the extrapolated Gibbs current and the coarse/fine difference.

    The coarse value uses every other node, so the estimate costs nothing
    extra; the quadrature error is second order in the node spacing.
    """
    fine = gibbs_limit_current(data, T_plus, T_minus)
    dT = 0.5 * (T_plus - T_minus)
    sub = (slice(None, None, 2),) * data.d
    vel = np.nan_to_num(data.velocity)[sub]
    sgn = data.sign_d()[sub]
    coarse = -dT * _contract(sgn, vel) / sgn[..., 0].size
    return (4 * fine - coarse) / 3, fine - coarse


@dataclass(frozen=True)
class SecondLawVerdict:
    passed: bool
    T_plus: float
    T_minus: float
    j_d: float
    C: float | None
    reason: str = ""

    def row(self):
        return ["second-law", "PASS" if self.passed else "FAIL", self.T_plus, self.T_minus, self.j_d,
                "" if self.C is None else self.C, self.reason]


def second_law_check(T_plus: float, T_minus: float, j_inf, tol: float = 1e-10) -> SecondLawVerdict:
    """Heat must flow from the hot half to the cold half: ``sign(j^d) = -sign(T_+ - T_-)``."""
    j_d = float(np.atleast_1d(j_inf)[-1])
    dT = T_plus - T_minus
    if dT == 0:
        ok = abs(j_d) <= tol
        return SecondLawVerdict(ok, T_plus, T_minus, j_d, None, "" if ok else "nonzero current at equal temperatures")
    C = -j_d / dT
    ok = C > 0 and abs(j_d) > tol
    return SecondLawVerdict(ok, T_plus, T_minus, j_d, C, "" if ok else "current does not run from hot to cold")
