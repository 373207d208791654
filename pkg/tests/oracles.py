"""Independent reference computations used by the tests.

None of these touch the FFT machinery of the package: dynamics use dense
matrix exponentials or RK4 in real space, symbols are explicit sums over the
support, and scalar constants come from scipy quadrature.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy import integrate, linalg, stats


def torus_sites(d: int, N: int) -> list[tuple[int, ...]]:
    return list(itertools.product(range(N), repeat=d))


def stiffness_matrix(V, N: int) -> np.ndarray:
    """Dense ``K`` with ``(K u)(x) = sum_y V(x - y) u(y)`` on the torus, index ``(site, component)``."""
    sites = torus_sites(V.d, N)
    pos = {s: i for i, s in enumerate(sites)}
    n = V.n
    K = np.zeros((len(sites) * n, len(sites) * n))
    for x in sites:
        for z, Vz in V.support.items():
            y = tuple((xi - zi) % N for xi, zi in zip(x, z))
            i, j = pos[x], pos[y]
            K[i * n:(i + 1) * n, j * n:(j + 1) * n] += Vz
    return K


def generator(V, N: int) -> np.ndarray:
    """``A`` with ``d/dt (u, v) = A (u, v)`` in the ordering ``[u (all sites), v (all sites)]``."""
    K = stiffness_matrix(V, N)
    m = K.shape[0]
    return np.block([[np.zeros((m, m)), np.eye(m)], [-K, np.zeros((m, m))]])


def flatten_state(Y: np.ndarray) -> np.ndarray:
    """``(*grid, 2n)`` stacked field -> ``[u, v]`` vector matching :func:`generator`."""
    n = Y.shape[-1] // 2
    return np.concatenate([Y[..., :n].reshape(-1), Y[..., n:].reshape(-1)])


def unflatten_state(w: np.ndarray, shape: tuple[int, ...], n: int) -> np.ndarray:
    half = w.size // 2
    return np.concatenate([w[:half].reshape(shape + (n,)), w[half:].reshape(shape + (n,))], axis=-1)


def dense_evolve(V, N: int, Y0: np.ndarray, t: float) -> np.ndarray:
    E = linalg.expm(t * generator(V, N))
    return unflatten_state(E @ flatten_state(Y0), Y0.shape[:-1], V.n)


def rk4_evolve(V, Y0: np.ndarray, t: float, steps: int) -> np.ndarray:
    n = V.n

    def rhs(Y):
        return np.concatenate([Y[..., n:], -V.apply(Y[..., :n])], axis=-1)

    h = t / steps
    Y = Y0.copy()
    for _ in range(steps):
        k1 = rhs(Y)
        k2 = rhs(Y + 0.5 * h * k1)
        k3 = rhs(Y + 0.5 * h * k2)
        k4 = rhs(Y + h * k3)
        Y = Y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return Y


def symbol_by_sum(V, theta) -> np.ndarray:
    """``V^(theta) = sum_z V(z) exp(i z.theta)`` for one point ``theta``."""
    theta = np.atleast_1d(theta)
    out = np.zeros((V.n, V.n), dtype=complex)
    for z, Vz in V.support.items():
        out += Vz * np.exp(1j * np.dot(z, theta))
    return out


def dense_covariance(V, N: int, Q0: np.ndarray, t: float) -> np.ndarray:
    """``E_t Q0 E_t^T`` with ``Q0`` in the :func:`generator` ordering."""
    E = linalg.expm(t * generator(V, N))
    return E @ Q0 @ E.T


def dense_initial_covariance(spec, N: int) -> np.ndarray:
    """Assemble the full initial covariance of a measure from its ``initial_covariance(x, y)``."""
    sites = torus_sites(spec.grid.d, N)
    n = spec.n
    S = len(sites)
    Q = np.zeros((2 * n * S, 2 * n * S))
    signed = [tuple(c if c < N // 2 else c - N for c in s) for s in sites]
    if hasattr(spec, "initial_covariance"):
        cov = spec.initial_covariance
    else:
        cov = lambda x, y: spec.at(np.subtract(x, y))  # noqa: E731
    for i, x in enumerate(signed):
        for j, y in enumerate(signed):
            blk = cov(x, y)
            for a in range(2):
                for b in range(2):
                    Q[a * n * S + i * n:a * n * S + (i + 1) * n, b * n * S + j * n:b * n * S + (j + 1) * n] = \
                        blk[a * n:(a + 1) * n, b * n:(b + 1) * n]
    return Q


def dense_block(Q: np.ndarray, N: int, d: int, n: int, x, y) -> np.ndarray:
    """Extract the ``2n x 2n`` block ``Q(x, y)`` from a dense covariance."""
    S = N**d
    ix = np.ravel_multi_index(tuple(c % N for c in x), (N,) * d)
    iy = np.ravel_multi_index(tuple(c % N for c in y), (N,) * d)
    rows = [a * n * S + ix * n + k for a in range(2) for k in range(n)]
    cols = [b * n * S + iy * n + k for b in range(2) for k in range(n)]
    return Q[np.ix_(rows, cols)]


def elastic_gibbs_current_quad(m: float, dT: float) -> float:
    """``-(dT / 2 pi) int |sin t| / sqrt(m^2 + 2 - 2 cos t) dt`` by adaptive quadrature."""
    val, _ = integrate.quad(lambda t: abs(np.sin(t)) / np.sqrt(m * m + 2 - 2 * np.cos(t)), -np.pi, np.pi,
                            points=[0.0], limit=200, epsabs=1e-13, epsrel=1e-13)
    return -dT * val / (2 * np.pi)


def elastic_E0_quad(m: float) -> float:
    """``E(0) = (2 pi)^-1 int dtheta / omega^2`` for the 1-d elastic lattice."""
    val, _ = integrate.quad(lambda t: 1.0 / (m * m + 2 - 2 * np.cos(t)), -np.pi, np.pi, epsabs=1e-13, epsrel=1e-13)
    return val / (2 * np.pi)


def clipped_moment(p: int, sigma: float, c: float) -> float:
    """``E clip(X, c)^p`` for ``X ~ N(0, sigma^2)`` by 1-d quadrature."""
    body, _ = integrate.quad(lambda x: x**p * stats.norm.pdf(x, scale=sigma), -c, c, epsabs=1e-14, epsrel=1e-13)
    tails = 2 * c**p * stats.norm.sf(c, scale=sigma) if p % 2 == 0 else 0.0
    return body + tails


def clipped_excess_kurtosis(sigma: float, c: float) -> float:
    m2 = clipped_moment(2, sigma, c)
    m4 = clipped_moment(4, sigma, c)
    return m4 / m2**2 - 3.0


def clipped_cross_moment(rho: float, sigma: float, c: float) -> float:
    """``E clip(X) clip(Y)`` for a bivariate normal pair with variance ``sigma^2`` and correlation ``rho``.

    Conditions on ``X``: ``Y | X = x`` is normal with mean ``rho x`` and
    standard deviation ``sigma sqrt(1 - rho^2)``, whose clipped mean is
    elementary, leaving a 1-d quadrature in ``x``.
    """
    s = sigma * np.sqrt(1.0 - rho * rho)

    def cond_mean(x):
        mu = rho * x
        if s == 0:
            return np.clip(mu, -c, c)
        a, b = (-c - mu) / s, (c - mu) / s
        Pa, Pb = stats.norm.cdf(a), stats.norm.cdf(b)
        return c * (1 - Pb) - c * Pa + mu * (Pb - Pa) + s * (stats.norm.pdf(a) - stats.norm.pdf(b))

    L = 12 * sigma
    val, _ = integrate.quad(lambda x: np.clip(x, -c, c) * cond_mean(x) * stats.norm.pdf(x, scale=sigma),
                            -L, L, points=[-c, c], limit=200, epsabs=1e-13, epsrel=1e-12)
    return val
