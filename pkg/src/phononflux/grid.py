"""Periodic torus grids and the lattice Fourier convention.

The forward transform is ``f^(theta) = sum_z f(z) exp(i z.theta)`` and the
inverse is ``f(z) = (2 pi)^-d int f^(theta) exp(-i z.theta) dtheta``.  On an
``N^d`` grid the integral becomes the node average, so both directions map
onto numpy's unscaled/forward-scaled FFT pair.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import GridMismatchError


@dataclass(frozen=True)
class TorusGrid:
    """Nodes ``theta_m = 2 pi m / N`` on the d-torus (and the dual spatial torus)."""

    d: int
    N: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.N < 2 or self.N % 2:
            raise ValueError("N must be an even positive integer")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def size(self) -> int:
        return self.N**self.d

    @property
    def spacing(self) -> float:
        return 2 * np.pi / self.N

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(self.d))

    @cached_property
    def theta(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (d,)``, values in [0, 2 pi)."""
        t = self.spacing * np.arange(self.N)
        return np.stack(np.meshgrid(*([t] * self.d), indexing="ij"), axis=-1)

    @cached_property
    def sites(self) -> np.ndarray:
        """Signed spatial offsets in ``[-N/2, N/2)``, shape ``shape + (d,)``."""
        s = np.arange(self.N)
        s = np.where(s < self.N // 2, s, s - self.N)
        return np.stack(np.meshgrid(*([s] * self.d), indexing="ij"), axis=-1)

    def index(self, x) -> tuple[int, ...]:
        """Array index of lattice point ``x`` (any integers, wrapped mod N)."""
        x = tuple(int(c) % self.N for c in np.atleast_1d(x))
        if len(x) != self.d:
            raise ValueError(f"expected a {self.d}-dimensional site, got {len(x)}")
        return x

    def node_index(self, theta) -> tuple[int, ...]:
        """Index of the grid node nearest to ``theta``."""
        m = np.rint(np.asarray(theta, dtype=float) / self.spacing).astype(int) % self.N
        return tuple(int(c) for c in np.atleast_1d(m))

    def negate(self, arr: np.ndarray, lead: int = 0) -> np.ndarray:
        """Return ``arr`` evaluated at ``-theta`` (or ``-x``) along the grid axes."""
        out = arr
        for ax in range(lead, lead + self.d):
            out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
        return out

    def check_same(self, other: "TorusGrid", what: str = "grid"):
        if self != other:
            raise GridMismatchError(f"{what}: {other} does not match {self}")


def spatial_axes(grid: TorusGrid, lead: int = 0) -> tuple[int, ...]:
    return tuple(range(lead, lead + grid.d))


def to_fourier(f: np.ndarray, grid: TorusGrid, lead: int = 0) -> np.ndarray:
    """``sum_z f(z) e^{i z theta}`` on the grid nodes."""
    return np.fft.ifftn(f, axes=spatial_axes(grid, lead), norm="forward")


def to_real(fh: np.ndarray, grid: TorusGrid, lead: int = 0) -> np.ndarray:
    """Node-average inverse of :func:`to_fourier` (complex result)."""
    return np.fft.fftn(fh, axes=spatial_axes(grid, lead), norm="forward")


def real_part(z: np.ndarray, what: str = "array", rtol: float = 1e-10) -> np.ndarray:
    """Drop the imaginary part after checking it is round-off relative to the data."""
    from .errors import NumericalError

    z = np.asarray(z)
    if not np.iscomplexobj(z):
        return z
    scale = max(float(np.max(np.abs(z), initial=0.0)), 1e-300)
    resid = float(np.max(np.abs(z.imag), initial=0.0))
    if resid > rtol * scale and resid > 1e-280:
        raise NumericalError(f"{what}: imaginary residue {resid:.3e} exceeds {rtol:g} of scale {scale:.3e}")
    return np.ascontiguousarray(z.real)
