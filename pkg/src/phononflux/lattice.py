"""Force matrices, their symbols, dispersion relations and structural checks.

Everything here is computed nodewise on a :class:`~phononflux.grid.TorusGrid`.
Branches that agree to within ``cluster_tol`` are merged into one cluster and
only the cluster projection is ever used, so eigenvector phases never leak
into results.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping

import numpy as np

from .errors import ConditionError, ModelError, SingularBranchError
from .grid import TorusGrid

OMEGA_FLOOR = 1e-12


class InteractionMatrix:
    """Finitely supported map ``z -> V(z)`` of real ``n x n`` matrices on ``Z^d``.

    Entries are stored with set semantics: the order in which they are given
    is irrelevant and a repeated lattice vector is an error.
    """

    def __init__(self, d: int, n: int, entries: Mapping | list):
        if d < 1 or n < 1:
            raise ModelError("d and n must be positive")
        items = entries.items() if isinstance(entries, Mapping) else entries
        support: dict[tuple[int, ...], np.ndarray] = {}
        for z, mat in items:
            z = tuple(int(c) for c in np.atleast_1d(z))
            if len(z) != d:
                raise ModelError(f"lattice vector {z} is not {d}-dimensional")
            if z in support:
                raise ModelError(f"duplicate entry for z={z}")
            mat = np.array(mat, dtype=float).reshape(n, n) if np.ndim(mat) else np.full((n, n), float(mat))
            if not np.all(np.isfinite(mat)):
                raise ModelError(f"non-finite entry at z={z}")
            support[z] = mat
        if not support:
            raise ModelError("empty support")
        self.d = d
        self.n = n
        self._support = support

    @property
    def support(self) -> dict[tuple[int, ...], np.ndarray]:
        return {z: m.copy() for z, m in self._support.items()}

    @property
    def support_radius(self) -> int:
        return max(max((abs(c) for c in z), default=0) for z in self._support)

    def __getitem__(self, z) -> np.ndarray:
        z = tuple(int(c) for c in np.atleast_1d(z))
        return self._support.get(z, np.zeros((self.n, self.n))).copy()

    def __repr__(self):
        return f"InteractionMatrix(d={self.d}, n={self.n}, |support|={len(self._support)})"

    def symmetry_defect(self) -> float:
        """``max |V(-z) - V(z)^T|`` over the support (missing partners count as zero)."""
        worst = 0.0
        for z, mat in self._support.items():
            partner = self._support.get(tuple(-c for c in z), np.zeros_like(mat))
            worst = max(worst, float(np.max(np.abs(partner - mat.T))))
        return worst

    def validate(self, tol: float = 1e-12):
        defect = self.symmetry_defect()
        if defect > tol:
            raise ModelError(f"V(-z) != V(z)^T: worst violation {defect:.3e}")

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "n": self.n,
            "entries": [{"z": list(z), "V": m.tolist()} for z, m in sorted(self._support.items())],
        }

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """Support as arrays ``(Z, Vs)`` with shapes ``(S, d)`` and ``(S, n, n)``."""
        zs = sorted(self._support)
        return np.array(zs, dtype=int).reshape(len(zs), self.d), np.stack([self._support[z] for z in zs])

    def apply(self, u: np.ndarray, lead: int = 0) -> np.ndarray:
        """Periodic convolution ``(V u)(x) = sum_z V(z) u(x - z)``; ``u`` has shape ``(..., *grid, n)``."""
        out = np.zeros_like(u, dtype=float)
        axes = tuple(range(lead, lead + self.d))
        for z, mat in self._support.items():
            out += np.roll(u, shift=z, axis=axes) @ mat.T
        return out


def build_elastic_lattice(d: int, m: float) -> InteractionMatrix:
    """Nearest-neighbour elastic lattice with mass ``m``: ``V(0) = 2d + m^2``, ``V(+-e_k) = -1``."""
    if d < 1:
        raise ModelError("d must be >= 1")
    entries = {(0,) * d: 2.0 * d + float(m) ** 2}
    for k in range(d):
        for s in (1, -1):
            z = [0] * d
            z[k] = s
            entries[tuple(z)] = -1.0
    return InteractionMatrix(d, 1, entries)


def block_diagonal(*models: InteractionMatrix) -> InteractionMatrix:
    """Direct sum of independent crystals sharing the same dimension."""
    d = models[0].d
    if any(mdl.d != d for mdl in models):
        raise ModelError("all blocks must share the dimension")
    n = sum(mdl.n for mdl in models)
    zs = set().union(*(mdl.support.keys() for mdl in models))
    entries = {}
    for z in zs:
        mat = np.zeros((n, n))
        off = 0
        for mdl in models:
            mat[off:off + mdl.n, off:off + mdl.n] = mdl[z]
            off += mdl.n
        entries[z] = mat
    return InteractionMatrix(d, n, entries)


def load_model(spec: Mapping) -> InteractionMatrix:
    """Model from its JSON form: explicit entries or ``{"type": "elastic", "d": .., "m": ..}``."""
    if spec.get("type") == "elastic":
        return build_elastic_lattice(int(spec["d"]), float(spec.get("m", 0.0)))
    try:
        return InteractionMatrix(int(spec["d"]), int(spec["n"]), [(e["z"], e["V"]) for e in spec["entries"]])
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed model spec: {exc}") from exc


def read_model(path) -> InteractionMatrix:
    with open(path) as fh:
        return load_model(json.load(fh))


def _as_points(V: InteractionMatrix, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if V.d == 1 and (theta.ndim == 0 or theta.shape[-1] != 1):
        theta = theta[..., None]
    if theta.shape[-1] != V.d:
        raise ValueError(f"theta must have a trailing axis of length {V.d}")
    return theta


def _phases(V: InteractionMatrix, theta) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    theta = _as_points(V, theta)
    Z, Vs = V.stacked()
    ph = np.exp(1j * np.tensordot(theta, Z.T, axes=1))  # (..., S)
    return Z, Vs, ph


def symbol(V: InteractionMatrix, theta) -> np.ndarray:
    """``V^(theta) = sum_z V(z) exp(i z.theta)``; ``theta`` has trailing axis of length d."""
    V.validate()
    _, Vs, ph = _phases(V, theta)
    out = np.einsum("...s,sij->...ij", ph, Vs)
    # exact Hermitian projection removes only round-off
    return 0.5 * (out + np.conj(np.swapaxes(out, -1, -2)))


def symbol_gradient(V: InteractionMatrix, theta) -> np.ndarray:
    """``d/dtheta_k V^(theta) = sum_z i z_k V(z) e^{i z.theta}``, shape ``(..., d, n, n)``."""
    Z, Vs, ph = _phases(V, theta)
    out = np.einsum("...s,sk,sij->...kij", ph, 1j * Z, Vs)
    return 0.5 * (out + np.conj(np.swapaxes(out, -1, -2)))


@dataclass(frozen=True, eq=False)
class DispersionData:
    """Nodewise spectral data of ``V^`` on a grid.

    ``omega`` holds branches sorted ascending, replaced by their cluster mean;
    ``cluster`` labels equal-frequency groups per node; ``velocity[..., k, :]``
    is the cluster group velocity (NaN where the branch is below the floor).
    """

    model: InteractionMatrix
    grid: TorusGrid
    vhat: np.ndarray
    dvhat: np.ndarray
    omega: np.ndarray
    vecs: np.ndarray
    cluster: np.ndarray
    velocity: np.ndarray
    cluster_tol: float
    mask_tol: float = 1e-6
    extras: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def d(self) -> int:
        return self.grid.d

    @cached_property
    def same_cluster(self) -> np.ndarray:
        """``chi[..., k, l]`` true when branches k and l share a cluster."""
        return self.cluster[..., :, None] == self.cluster[..., None, :]

    @cached_property
    def projections(self) -> np.ndarray:
        """Cluster projection containing branch k, shape ``(..., n, n, n)`` indexed ``[..., k, :, :]``."""
        B = self.vecs
        outer = np.einsum("...ik,...jk->...kij", B, np.conj(B))
        return np.einsum("...kl,...lij->...kij", self.same_cluster.astype(float), outer)

    def cluster_projections(self, node) -> list[np.ndarray]:
        """Distinct projections at one node, ordered by frequency."""
        P = self.projections[node]
        labels = self.cluster[node]
        return [P[int(np.argmax(labels == c))] for c in np.unique(labels)]

    def funm(self, f: Callable[[np.ndarray], np.ndarray] | np.ndarray) -> np.ndarray:
        """``sum_sigma f(omega_sigma) Pi_sigma`` nodewise; ``f`` may be a callable or precomputed values."""
        vals = f(self.omega) if callable(f) else np.asarray(f)
        return np.einsum("...ik,...k,...jk->...ij", self.vecs, vals, np.conj(self.vecs))

    def pinch(self, M: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        """``sum_sigma Pi_sigma w_sigma M Pi_sigma`` applied to each ``n x n`` block of ``M``.

        ``M`` has shape ``(*grid, 2n, 2n)`` or ``(*grid, n, n)``; ``weights``
        (per branch, constant on clusters) default to one.
        """
        n = self.n
        nb = M.shape[-1] // n
        B = self.vecs
        Bh = np.conj(np.swapaxes(B, -1, -2))
        chi = self.same_cluster.astype(complex)
        if weights is not None:
            chi = chi * weights[..., :, None]
        out = np.empty_like(M, dtype=complex)
        for i in range(nb):
            for j in range(nb):
                blk = M[..., i * n:(i + 1) * n, j * n:(j + 1) * n]
                rot = Bh @ blk @ B
                out[..., i * n:(i + 1) * n, j * n:(j + 1) * n] = B @ (chi * rot) @ Bh
        return out

    @property
    def max_velocity(self) -> float:
        """Largest group speed ``max |grad omega_k|`` over nodes and branches."""
        v = np.linalg.norm(np.nan_to_num(self.velocity), axis=-1)
        return float(np.max(v))

    def horizon(self) -> float:
        """No-wraparound horizon ``L / (4 v_max)``."""
        vmax = self.max_velocity
        return np.inf if vmax == 0 else self.grid.N / (4.0 * vmax)

    def velocity_checked(self) -> np.ndarray:
        if np.any(np.isnan(self.velocity)):
            node = tuple(int(i) for i in np.argwhere(np.isnan(self.velocity[..., 0]))[0])
            raise SingularBranchError(f"branch below omega floor at node {node}; group velocity undefined")
        return self.velocity

    def sign_d(self, tol: float | None = None) -> np.ndarray:
        """``sgn(d omega_k / d theta_d)`` per branch, zero on the critical mask."""
        tol = self.mask_tol if tol is None else tol
        vd = np.nan_to_num(self.velocity[..., self.d - 1])
        s = np.sign(vd)
        s[np.abs(vd) < tol] = 0.0
        s[critical_set(self, tol)] = 0.0
        return s

    @cached_property
    def hessian_det(self) -> np.ndarray:
        """Finite-difference estimate of ``det(d^2 omega_k / dtheta_i dtheta_j)`` per node and branch."""
        w = self.omega
        h = self.grid.spacing
        d = self.d
        H = np.empty(w.shape + (d, d))
        for i in range(d):
            H[..., i, i] = (np.roll(w, -1, axis=i) - 2 * w + np.roll(w, 1, axis=i)) / h**2
            for j in range(i + 1, d):
                pp = np.roll(np.roll(w, -1, axis=i), -1, axis=j)
                pm = np.roll(np.roll(w, -1, axis=i), 1, axis=j)
                mp = np.roll(np.roll(w, 1, axis=i), -1, axis=j)
                mm = np.roll(np.roll(w, 1, axis=i), 1, axis=j)
                H[..., i, j] = H[..., j, i] = (pp - pm - mp + mm) / (4 * h**2)
        return np.linalg.det(H)


def dispersion(V: InteractionMatrix, grid: TorusGrid, cluster_tol: float | None = None,
               psd_tol: float = 1e-10, mask_tol: float = 1e-6) -> DispersionData:
    """Eigen-decompose ``V^`` on every node and derive clustered branches and velocities."""
    if grid.d != V.d:
        raise ModelError(f"model dimension {V.d} does not match grid dimension {grid.d}")
    vhat = symbol(V, grid.theta)
    dvhat = symbol_gradient(V, grid.theta)
    lam, vecs = np.linalg.eigh(vhat)
    scale = max(1.0, float(np.max(np.abs(lam))))
    if lam.min() < -psd_tol * scale:
        node = np.unravel_index(int(np.argmin(lam.min(axis=-1))), grid.shape)
        raise ConditionError(f"E3 violated: eigenvalue {lam.min():.3e} of V^ at node {node}")
    omega = np.sqrt(np.clip(lam, 0.0, None))
    if cluster_tol is None:
        cluster_tol = 1e-8 * max(float(omega.max()), 1e-300)
    gaps = np.diff(omega, axis=-1) > cluster_tol
    cluster = np.concatenate([np.zeros(omega.shape[:-1] + (1,), dtype=int), np.cumsum(gaps, axis=-1)], axis=-1)
    chi = (cluster[..., :, None] == cluster[..., None, :]).astype(float)
    size = chi.sum(axis=-1)
    omega = (chi @ omega[..., None])[..., 0] / size
    # Hellmann-Feynman per branch, averaged over the cluster (basis independent)
    diag = np.einsum("...ik,...cij,...jk->...kc", np.conj(vecs), dvhat, vecs).real
    diag = np.einsum("...kl,...lc->...kc", chi, diag) / size[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        velocity = diag / (2.0 * omega[..., None])
    velocity[omega < OMEGA_FLOOR] = np.nan
    return DispersionData(V, grid, vhat, dvhat, omega, vecs, cluster, velocity, float(cluster_tol), mask_tol)


def critical_set(data: DispersionData, tol: float | None = None) -> np.ndarray:
    """Node mask approximating the critical set.

    A node is masked when a branch is below ``tol``, a branch has
    ``|d omega / d theta_d| < tol``, the Hessian determinant of a branch is
    below ``tol`` in magnitude, or two distinct clusters come closer than
    ``tol`` (crossing proxy; also where the cluster count drops).
    """
    tol = data.mask_tol if tol is None else tol
    w = data.omega
    mask = np.any(w < tol, axis=-1)
    vd = data.velocity[..., data.d - 1]
    mask |= np.any(np.isnan(vd) | (np.abs(np.nan_to_num(vd)) < tol), axis=-1)
    mask |= np.any(np.abs(data.hessian_det) < tol, axis=-1)
    if data.n > 1:
        ncl = data.cluster[..., -1]
        mask |= ncl < ncl.max()
        distinct = np.diff(data.cluster, axis=-1) > 0
        gaps = np.where(distinct, np.diff(w, axis=-1), np.inf)
        mask |= np.any(gaps < tol, axis=-1)
    return mask


@dataclass
class ConditionResult:
    status: str  # "pass" | "fail" | "not-applicable"
    witness: dict


@dataclass
class ConditionReport:
    results: dict[str, ConditionResult]

    @property
    def ok(self) -> bool:
        return all(r.status != "fail" for r in self.results.values())

    def __getitem__(self, key) -> ConditionResult:
        return self.results[key]

    def rows(self):
        for name, res in self.results.items():
            yield name, res.status, json.dumps(res.witness, sort_keys=True)


def _inverse_norm_average(data: DispersionData, stride: int, floor: float) -> tuple[float, float]:
    lam_min = (data.omega**2)[(slice(None, None, stride),) * data.d].min(axis=-1)
    singular = lam_min < floor
    inv = 1.0 / lam_min[~singular]
    return float(inv.mean()) if inv.size else np.inf, float(singular.mean())


def check_conditions(V: InteractionMatrix, data: DispersionData, tol: float = 1e-8,
                     e4_fraction: float = 0.99, e6_growth: float = 1.2) -> ConditionReport:
    """Numeric checks of E1-E6 on the grid of ``data``."""
    res: dict[str, ConditionResult] = {}
    res["E1"] = ConditionResult("pass", {"support_radius": V.support_radius, "support_size": len(V.support)})
    defect = V.symmetry_defect()
    res["E2"] = ConditionResult("pass" if defect <= tol else "fail", {"max_symmetry_violation": defect})
    lam_min = float((data.omega**2).min())
    herm = float(np.max(np.abs(data.vhat - np.conj(np.swapaxes(data.vhat, -1, -2)))))
    res["E3"] = ConditionResult("pass" if lam_min >= -tol and herm <= tol else "fail",
                                {"min_eigenvalue": lam_min, "hermiticity_defect": herm})

    D = data.hessian_det
    flat_frac = np.mean(np.abs(D) < tol, axis=tuple(range(data.d)))
    res["E4"] = ConditionResult("fail" if np.any(flat_frac >= e4_fraction) else "pass",
                                {"degenerate_fraction_per_branch": [float(f) for f in np.atleast_1d(flat_frac)]})

    w = data.omega.reshape(-1, data.n)
    offenders = []
    for k in range(data.n):
        for ell in range(k + 1, data.n):
            for sign, name in ((-1, "difference"), (1, "sum")):
                comb = w[:, k] + sign * w[:, ell]
                if np.ptp(comb) < tol and abs(comb.mean()) > tol:
                    offenders.append({"pair": [k, ell], "kind": name, "constant": float(comb.mean())})
    res["E5"] = ConditionResult("fail" if offenders else ("pass" if data.n > 1 else "not-applicable"),
                                {"offenders": offenders})

    floor = 1e-12 * max(1.0, float(np.max(data.omega**2)))
    avg, frac = _inverse_norm_average(data, 1, floor)
    witness = {"mean_inverse_norm": avg, "excluded_fraction": frac}
    if frac == 0.0:
        status = "not-applicable"
    else:
        coarse, _ = _inverse_norm_average(data, 2, floor)
        witness["mean_inverse_norm_half_grid"] = coarse
        status = "fail" if avg > e6_growth * coarse else "pass"
    res["E6"] = ConditionResult(status, witness)
    return ConditionReport(res)


def dispersion_rows(data: DispersionData, tol: float | None = None):
    """Rows ``theta_1..theta_d, branch, omega, vel_1..vel_d, critical``."""
    mask = critical_set(data, tol)
    th = data.grid.theta.reshape(-1, data.d)
    w = data.omega.reshape(-1, data.n)
    vel = data.velocity.reshape(-1, data.n, data.d)
    crit = mask.reshape(-1)
    for p in range(th.shape[0]):
        for k in range(data.n):
            yield [*th[p], k, w[p, k], *vel[p, k], int(crit[p])]
