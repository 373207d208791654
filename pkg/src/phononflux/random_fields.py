"""Initial random fields: Gaussian spectral densities, Gibbs states, glued two-temperature fields.

Gaussian samples are drawn on the torus with covariance equal to the grid
periodization of ``q``: real white noise is transformed, shaped by the
Hermitian square root of ``q^`` node by node, and transformed back.  Each
ensemble member ``i`` draws from its own stream seeded by ``(master_seed, i)``
so ensembles do not depend on evaluation order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
from scipy.special import erf

from .errors import ConditionError, ConfigError, GridMismatchError, NumericalError
from .grid import TorusGrid, real_part, to_fourier, to_real
from .lattice import OMEGA_FLOOR, DispersionData
from .propagator import FieldState


def sample_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent stream for ensemble member ``index``."""
    return np.random.default_rng([int(master_seed), int(index)])


@dataclass(frozen=True, eq=False)
class SpectralDensity:
    """Covariance symbol ``q^(theta)`` as full ``(*grid, 2n, 2n)`` blocks ``[[q00, q01], [q10, q11]]``."""

    grid: TorusGrid
    q: np.ndarray
    correlation_range: int | None = None
    label: str = ""

    def __post_init__(self):
        if self.q.shape[:-2] != self.grid.shape or self.q.shape[-1] != self.q.shape[-2] or self.q.shape[-1] % 2:
            raise GridMismatchError(f"density shape {self.q.shape} does not fit {self.grid}")

    @property
    def n(self) -> int:
        return self.q.shape[-1] // 2

    def block(self, i: int, j: int) -> np.ndarray:
        n = self.n
        return self.q[..., i * n:(i + 1) * n, j * n:(j + 1) * n]

    @classmethod
    def from_blocks(cls, grid, q00, q11, q01=None, q10=None, correlation_range=None, label=""):
        q00 = np.asarray(q00, dtype=complex)
        z = np.zeros_like(q00)
        q01 = z if q01 is None else np.asarray(q01, dtype=complex)
        q10 = np.conj(np.swapaxes(q01, -1, -2)) if q10 is None else np.asarray(q10, dtype=complex)
        top = np.concatenate([q00, q01], axis=-1)
        bot = np.concatenate([q10, np.asarray(q11, dtype=complex)], axis=-1)
        return cls(grid, np.concatenate([top, bot], axis=-2), correlation_range, label)

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.q - np.conj(np.swapaxes(self.q, -1, -2)))))

    def symmetry_defect(self) -> float:
        """``max |q^(-theta) - q^(theta)^T|``; zero iff real-space correlations are real."""
        return float(np.max(np.abs(self.grid.negate(self.q) - np.swapaxes(self.q, -1, -2))))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.q).min())

    def real_space(self) -> np.ndarray:
        """``q(z)`` on the torus, shape ``(*grid, 2n, 2n)``, indexed by ``z mod N``."""
        return real_part(to_real(self.q, self.grid), "real-space covariance", rtol=1e-9)

    def at(self, z) -> np.ndarray:
        return self.real_space()[self.grid.index(z)]

    @cached_property
    def sqrt(self) -> np.ndarray:
        """Hermitian PSD square root of every node block."""
        lam, U = np.linalg.eigh(self.q)
        scale = max(1.0, float(np.max(np.abs(lam), initial=0.0)))
        if lam.min(initial=0.0) < -1e-9 * scale:
            node = np.unravel_index(int(np.argmin(lam.min(axis=-1))), self.grid.shape)
            raise NumericalError(f"density not PSD: eigenvalue {lam.min():.3e} at node {node}")
        root = np.sqrt(np.clip(lam, 0.0, None))
        return np.einsum("...ik,...k,...jk->...ij", U, root, np.conj(U))

    # ensemble interface shared with TwoTempSpec and ClippedMeasure
    def draw(self, rngs: Sequence[np.random.Generator]) -> np.ndarray:
        """Stacked samples ``(len(rngs), *grid, 2n)``, one per generator."""
        noise = np.stack([rng.standard_normal(self.grid.shape + (2 * self.n,)) for rng in rngs])
        return self._shape_noise(noise)

    def _shape_noise(self, noise: np.ndarray) -> np.ndarray:
        wh = to_fourier(noise, self.grid, lead=1)
        yh = np.einsum("...ij,b...j->b...i", self.sqrt, wh)
        return real_part(to_real(yh, self.grid, lead=1), "Gaussian sample", rtol=1e-8)

    def covariance(self) -> "SpectralDensity":
        return self


def _fejer(theta: np.ndarray, N0: int) -> np.ndarray:
    out = np.full(theta.shape, float(N0))
    for z in range(1, N0):
        out += 2.0 * (N0 - z) * np.cos(z * theta)
    return out


def triangular_density(grid: TorusGrid, N0: int, scale: float = 1.0, n: int = 1) -> SpectralDensity:
    """Product-of-triangles correlations ``q(z) = scale * prod_k max(N0 - |z_k|, 0)`` in both diagonal blocks."""
    if N0 < 1:
        raise ValueError("N0 must be >= 1")
    fh = scale * np.prod(_fejer(grid.theta, N0), axis=-1)
    eye = np.eye(n)
    blk = fh[..., None, None] * eye
    return SpectralDensity.from_blocks(grid, blk, blk, correlation_range=N0 * grid.d, label=f"triangular(N0={N0})")


def white_noise_density(grid: TorusGrid, T_u: float, T_v: float, n: int = 1) -> SpectralDensity:
    eye = np.broadcast_to(np.eye(n), grid.shape + (n, n))
    return SpectralDensity.from_blocks(grid, T_u * eye, T_v * eye, correlation_range=1, label="white")


def gibbs_spectral_density(data: DispersionData, T: float) -> SpectralDensity:
    """Gibbs state at temperature ``T``: ``q00 = T V^-1``, ``q11 = T I``, no cross terms."""
    if T < 0:
        raise ValueError("temperature must be nonnegative")
    n = data.n
    eye = np.broadcast_to(np.eye(n), data.grid.shape + (n, n))
    if T == 0:
        z = np.zeros(data.grid.shape + (n, n))
        return SpectralDensity.from_blocks(data.grid, z, z, label="gibbs(T=0)")
    if data.omega.min() < OMEGA_FLOOR:
        node = np.unravel_index(int(np.argmin(data.omega.min(axis=-1))), data.grid.shape)
        raise ConditionError(f"E6 violated: V^ singular at node {node}; Gibbs state undefined for T > 0")
    q00 = T * data.funm(data.omega**-2.0)
    return SpectralDensity.from_blocks(data.grid, q00, T * eye, label=f"gibbs(T={T:g})")


def gaussian_sample(qhat: SpectralDensity, seed) -> FieldState:
    """One zero-mean Gaussian field with covariance ``q`` periodized on the torus."""
    Y = qhat.draw([np.random.default_rng(seed)])[0]
    return FieldState.from_stacked(qhat.grid, Y)


def signed_coordinate(grid: TorusGrid, axis: int | None = None) -> np.ndarray:
    """Signed offset of every site from the plane ``x_axis = 0`` (default: last axis)."""
    axis = grid.d - 1 if axis is None else axis
    return grid.sites[..., axis]


@dataclass(frozen=True, eq=False)
class TwoTempSpec:
    """Glued field ``zeta_-(x_d) Y_- + zeta_+(x_d) Y_+`` with independent ``Y_-``, ``Y_+``.

    ``cutoff_a = 0`` gives the sharp seam ``zeta_+ = 1{s >= 0}``; larger values
    use a linear ramp over ``|s| <= a``.  The antipodal plane ``s = -L/2`` is a
    second, unavoidable interface on the torus.
    """

    minus: SpectralDensity
    plus: SpectralDensity
    cutoff_a: int = 0

    def __post_init__(self):
        self.minus.grid.check_same(self.plus.grid, "two-temperature densities")
        if self.minus.n != self.plus.n:
            raise GridMismatchError("densities have different component counts")
        if self.cutoff_a < 0:
            raise ValueError("cutoff must be nonnegative")

    @property
    def grid(self) -> TorusGrid:
        return self.plus.grid

    @property
    def n(self) -> int:
        return self.plus.n

    def zeta(self, s) -> tuple[np.ndarray, np.ndarray]:
        """``(zeta_-(s), zeta_+(s))``."""
        s = np.asarray(s, dtype=float)
        a = self.cutoff_a
        if a == 0:
            zp = (s >= 0).astype(float)
            return 1.0 - zp, zp
        zp = np.clip((s + a) / (2.0 * a), 0.0, 1.0)
        return np.clip((a - s) / (2.0 * a), 0.0, 1.0), zp

    def profiles(self) -> tuple[np.ndarray, np.ndarray]:
        zm, zp = self.zeta(signed_coordinate(self.grid))
        return zm[..., None], zp[..., None]

    def draw(self, rngs: Sequence[np.random.Generator]) -> np.ndarray:
        shp = self.grid.shape + (2 * self.n,)
        nm, npl = [], []
        for rng in rngs:
            nm.append(rng.standard_normal(shp))
            npl.append(rng.standard_normal(shp))
        zm, zp = self.profiles()
        return zm * self.minus._shape_noise(np.stack(nm)) + zp * self.plus._shape_noise(np.stack(npl))

    def initial_covariance(self, x, y) -> np.ndarray:
        """Exact ``Q_0(x, y)`` (glued form)."""
        sx, sy = self._signed(x), self._signed(y)
        zmx, zpx = self.zeta(sx)
        zmy, zpy = self.zeta(sy)
        z = np.asarray(x) - np.asarray(y)
        return zmx * zmy * self.minus.at(z) + zpx * zpy * self.plus.at(z)

    def _signed(self, x) -> int:
        s = int(np.atleast_1d(x)[-1]) % self.grid.N
        return s if s < self.grid.N // 2 else s - self.grid.N


def two_temperature_sample(spec: TwoTempSpec, seed) -> FieldState:
    Y = spec.draw([np.random.default_rng(seed)])[0]
    return FieldState.from_stacked(spec.grid, Y)


def clip(x: np.ndarray, c) -> np.ndarray:
    return np.clip(x, -c, c)


def nongaussian_transform(Y: FieldState, c) -> FieldState:
    """Odd clipping ``x -> max(-c, min(c, x))`` applied to ``u`` and ``v``; ``c`` may be a ``(c_u, c_v)`` pair."""
    cu, cv = (c, c) if np.ndim(c) == 0 else c
    if cu <= 0 or cv <= 0:
        raise ValueError("clip level must be positive")
    return FieldState(Y.grid, clip(Y.u, cu), clip(Y.v, cv), Y.time)


def _hermite_coefficients(sigma: float, c: float, kmax: int) -> np.ndarray:
    """Normalized Hermite coefficients ``E[clip(sigma Z, c) He_k(Z)] / sqrt(k!)``, ``k = 0..kmax``."""
    a = c / sigma
    phi = math.exp(-0.5 * a * a) / math.sqrt(2 * math.pi)
    # normalized probabilists' Hermite values h_j(a) = He_j(a) / sqrt(j!)
    h = np.zeros(kmax + 1)
    h[0] = 1.0
    if kmax >= 1:
        h[1] = a
    for j in range(1, kmax):
        h[j + 1] = (a * h[j] - math.sqrt(j) * h[j - 1]) / math.sqrt(j + 1)
    coef = np.zeros(kmax + 1)
    # Stein: E[g(Z) He_k] = E[g'(Z) He_{k-1}]; g' = sigma 1{|Z| < a}
    if kmax >= 1:
        coef[1] = sigma * erf(a / math.sqrt(2))
    for k in range(3, kmax + 1, 2):
        coef[k] = sigma * (-2.0 * phi) * h[k - 2] * math.sqrt(1.0 / (k * (k - 1)))
    return coef


def clipped_second_moment(sigma: float, c: float) -> float:
    """``E[clip(sigma Z, c)^2]`` in closed form."""
    if sigma == 0:
        return 0.0
    a = c / sigma
    p = erf(a / math.sqrt(2))
    phi = math.exp(-0.5 * a * a) / math.sqrt(2 * math.pi)
    return sigma**2 * (p - 2 * a * phi) + c**2 * (1 - p)


def clipped_correlation(rho, sigma_a: float, sigma_b: float, c_a: float, c_b: float, kmax: int = 4000) -> np.ndarray:
    """``E[clip(X_a) clip(X_b)]`` for jointly Gaussian ``X`` with correlation ``rho`` (Mehler expansion)."""
    rho = np.asarray(rho, dtype=float)
    if sigma_a == 0 or sigma_b == 0:
        return np.zeros_like(rho)
    ca = _hermite_coefficients(sigma_a, c_a, kmax)
    cb = _hermite_coefficients(sigma_b, c_b, kmax)
    k = np.arange(kmax + 1)
    out = np.sum((ca * cb)[None, :] * np.power.outer(rho.ravel(), k), axis=1).reshape(rho.shape)
    # the series converges slowly at |rho| = 1: use the closed forms there
    full = np.isclose(np.abs(rho), 1.0, atol=1e-12)
    if np.any(full) and sigma_a == sigma_b and c_a == c_b:
        out[full] = np.sign(rho[full]) * clipped_second_moment(sigma_a, c_a)
    return out


def clipped_density(qhat: SpectralDensity, c) -> SpectralDensity:
    """Exact covariance symbol of the clipped Gaussian field ``clip(Y)``.

    Uses the real-space correlations of ``qhat``; each pair of components is
    mapped through the clipped-Gaussian correlation function.
    """
    n = qhat.n
    cu, cv = (c, c) if np.ndim(c) == 0 else c
    levels = [cu] * n + [cv] * n
    q = qhat.real_space()
    var = np.diagonal(q[(0,) * qhat.grid.d]).copy()
    sig = np.sqrt(np.clip(var, 0.0, None))
    out = np.zeros_like(q)
    for a in range(2 * n):
        for b in range(2 * n):
            if sig[a] == 0 or sig[b] == 0:
                continue
            rho = np.clip(q[..., a, b] / (sig[a] * sig[b]), -1.0, 1.0)
            nz = np.abs(rho) > 1e-15
            vals = np.zeros_like(rho)
            vals[nz] = clipped_correlation(rho[nz], sig[a], sig[b], levels[a], levels[b])
            out[..., a, b] = vals
    qh = to_fourier(out, qhat.grid)
    qh = 0.5 * (qh + np.conj(np.swapaxes(qh, -1, -2)))
    return SpectralDensity(qhat.grid, qh, qhat.correlation_range, f"clipped({qhat.label})")


@dataclass(frozen=True, eq=False)
class ClippedMeasure:
    """Distribution of ``clip(Y)`` for ``Y`` drawn from ``base``."""

    base: SpectralDensity | TwoTempSpec
    c: float | tuple[float, float]

    @property
    def grid(self) -> TorusGrid:
        return self.base.grid

    @property
    def n(self) -> int:
        return self.base.n

    def draw(self, rngs) -> np.ndarray:
        Y = self.base.draw(rngs)
        cu, cv = (self.c, self.c) if np.ndim(self.c) == 0 else self.c
        n = self.n
        return np.concatenate([clip(Y[..., :n], cu), clip(Y[..., n:], cv)], axis=-1)

    def covariance(self) -> SpectralDensity:
        if not isinstance(self.base, SpectralDensity):
            raise NotImplementedError("closed-form covariance only for translation-invariant bases")
        return clipped_density(self.base, self.c)


def load_density(spec: Mapping, data: DispersionData, pointer: str = "") -> SpectralDensity:
    """Density from JSON: ``{"type": "gibbs", "T": ..}`` or ``{"type": "triangular", "N0": .., "scale": ..}``."""
    kind = spec.get("type")
    try:
        if kind == "gibbs":
            return gibbs_spectral_density(data, float(spec["T"]))
        if kind == "triangular":
            return triangular_density(data.grid, int(spec["N0"]), float(spec.get("scale", 1.0)), data.n)
    except KeyError as exc:
        raise ConfigError(f"missing field {exc}", f"{pointer}/{exc.args[0]}") from exc
    raise ConfigError(f"unknown density type {kind!r}", f"{pointer}/type")


def load_two_temperature(spec: Mapping, data: DispersionData, pointer: str = "") -> TwoTempSpec:
    for key in ("minus", "plus"):
        if key not in spec:
            raise ConfigError("missing field", f"{pointer}/{key}")
    return TwoTempSpec(load_density(spec["minus"], data, f"{pointer}/minus"),
                       load_density(spec["plus"], data, f"{pointer}/plus"),
                       int(spec.get("cutoff_a", 0)))
