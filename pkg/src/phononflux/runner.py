"""Experiment configuration, task orchestration and CSV/JSON output."""
from __future__ import annotations

import csv
import hashlib
import json
import platform
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np
import scipy

from . import __version__
from .covariance import (ClippedMeasure, TestFunction, clt_diagnostics, exact_covariance_propagation,
                         limit_covariance, make_test_function, mc_covariance)
from .current import (current_pairs, gibbs_limit_current, limit_current, mc_current,
                      mean_current_from_covariance, second_law_check)
from .errors import CertificationError, ConfigError, ModelError, NumericalError, PhononfluxError
from .grid import TorusGrid
from .lattice import check_conditions, dispersion, dispersion_rows, load_model
from .propagator import FieldState, evolve, evolve_array, hamiltonian
from .random_fields import SpectralDensity, TwoTempSpec, load_density, load_two_temperature
from .stats import default_threads

TASKS = ("dispersion", "check", "evolve", "covariance", "limit_covariance", "current", "second_law", "clt", "decay")
# dependency order used when several tasks are requested
ORDER = {name: i for i, name in enumerate(TASKS)}

_density = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["gibbs", "triangular"]},
        "T": {"type": "number", "minimum": 0},
        "N0": {"type": "integer", "minimum": 1},
        "scale": {"type": "number", "exclusiveMinimum": 0},
    },
}

SCHEMA = {
    "type": "object",
    "required": ["model", "grid"],
    "additionalProperties": False,
    "properties": {
        "model": {"type": "object"},
        "grid": {"type": "object", "required": ["N"], "additionalProperties": False,
                 "properties": {"N": {"type": "integer", "minimum": 2, "multipleOf": 2}}},
        "ensemble": {"type": "object", "additionalProperties": False,
                     "properties": {"M": {"type": "integer", "minimum": 1},
                                    "master_seed": {"type": "integer", "minimum": 0}}},
        "temperatures": {"type": "object", "additionalProperties": False,
                         "properties": {"T_plus": {"type": "number", "minimum": 0},
                                        "T_minus": {"type": "number", "minimum": 0},
                                        "cutoff_a": {"type": "integer", "minimum": 0}}},
        "density": _density,
        "two_temperature": {"type": "object", "required": ["minus", "plus"],
                            "properties": {"minus": _density, "plus": _density,
                                           "cutoff_a": {"type": "integer", "minimum": 0}}},
        "clip": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "times": {"type": "array", "items": {"type": "number"}},
        "sites": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
        "test_function": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "theta0": {"type": ["number", "array"]},
                "width": {"type": "number", "exclusiveMinimum": 0},
                "support_radius": {"type": ["integer", "null"], "minimum": 1},
                "profile": {"enum": ["taper", "smooth"]},
                "weights": {"type": "array", "items": {"type": "number"}},
                "points": {"type": "array", "items": {
                    "type": "object", "required": ["x", "component", "value"],
                    "properties": {"x": {"type": "array", "items": {"type": "integer"}},
                                   "component": {"type": "integer", "minimum": 0},
                                   "value": {"type": "number"}}}},
            },
        },
        "observables": {"type": "array", "items": {"enum": list(TASKS)}},
        "output": {"type": "object", "additionalProperties": False,
                   "properties": {"dir": {"type": "string"},
                                  "precision": {"type": "integer", "minimum": 1, "maximum": 17}}},
        "threads": {"type": ["integer", "null"], "minimum": 1},
        "lambdas": {"type": "array", "items": {"type": "number"}},
    },
}


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


@dataclass
class ExperimentConfig:
    """Validated experiment description; ``raw`` keeps the JSON form for hashing."""

    raw: dict
    model: Any
    grid: TorusGrid
    M: int
    seed: int
    times: list[float]
    observables: list[str]
    out_dir: Path
    precision: int
    threads: int

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        validator = jsonschema.Draft202012Validator(SCHEMA)
        errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
        if errors:
            err = errors[0]
            raise ConfigError(err.message, _pointer(err.absolute_path))
        try:
            model = load_model(raw["model"])
        except (ModelError, KeyError, ValueError, TypeError) as exc:
            raise ConfigError(str(exc), "/model") from exc
        grid = TorusGrid(model.d, int(raw["grid"]["N"]))
        ens = raw.get("ensemble", {})
        out = raw.get("output", {})
        obs = sorted(dict.fromkeys(raw.get("observables", [])), key=ORDER.get)
        threads = raw.get("threads") or default_threads()
        for i, s in enumerate(raw.get("sites", [])):
            if len(s) != model.d:
                raise ConfigError(f"site needs {model.d} coordinates", f"/sites/{i}")
        return cls(raw, model, grid, int(ens.get("M", 100)), int(ens.get("master_seed", 0)),
                   [float(t) for t in raw.get("times", [0.0])], obs, Path(out.get("dir", "out")),
                   int(out.get("precision", 17)), int(threads))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        return cls.from_dict(raw)

    @property
    def digest(self) -> str:
        body = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(body.encode()).hexdigest()


@dataclass
class DecayReport:
    d: int
    times: np.ndarray
    sup_norm: np.ndarray
    tail: np.ndarray
    slope: float
    intercept: float

    def rows(self):
        for t, s, tl in zip(self.times, self.sup_norm, self.tail):
            yield ["point", t, s, tl]
        yield ["fit", "", self.slope, self.intercept]


def decay_probe(data, psi: TestFunction, times) -> DecayReport:
    """Sup-norm of the conjugate flow of ``psi`` and its log-log slope in ``t``.

    The tail column is the largest amplitude at sites farther than
    ``1.5 vbar t`` beyond the support box of ``psi``, relative to the peak
    (``nan`` when that region leaves the torus).
    """
    if not psi.d0_certified:
        raise CertificationError("decay probe needs a certified test function")
    times = np.asarray(times, dtype=float)
    if np.any(times <= 0):
        raise ValueError("decay times must be positive")
    if np.any(times > data.horizon()):
        warnings.warn("decay times beyond the no-wraparound horizon", RuntimeWarning, stacklevel=2)
    n = data.n
    swapped = np.concatenate([psi.values[..., n:], psi.values[..., :n]], axis=-1)
    dist = np.max(np.abs(data.grid.sites), axis=-1)
    R = psi.support_radius
    sup = np.empty(len(times))
    tail = np.full(len(times), np.nan)
    for i, t in enumerate(times):
        amp = np.max(np.abs(evolve_array(swapped, data, t)), axis=-1)
        sup[i] = amp.max()
        far = dist > R + 1.5 * data.max_velocity * t
        if np.any(far):
            tail[i] = amp[far].max() / sup[i]
    slope, intercept = np.polyfit(np.log(times), np.log(sup), 1)
    return DecayReport(data.grid.d, times, sup, tail, float(slope), float(intercept))


# ---------------------------------------------------------------- output helpers

class Writer:
    def __init__(self, out_dir: Path, precision: int):
        self.dir = out_dir
        self.precision = precision
        self.files: list[str] = []

    def fmt(self, v):
        if isinstance(v, (bool, np.bool_)):
            return int(v)
        if isinstance(v, (float, np.floating)):
            return format(float(v), f".{self.precision}g")
        if isinstance(v, (np.integer,)):
            return int(v)
        return v

    def write(self, name: str, header, rows):
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([self.fmt(v) for v in r])
        self.files.append(name)


@dataclass
class RunResult:
    manifest: dict
    failures: list[str] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        if self.errors:
            kinds = {e["kind"] for e in self.errors}
            return 2 if kinds == {"config"} else 3
        return 4 if self.failures else 0


class _Context:
    """Lazily built objects shared between tasks."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self._data = None
        self._measure = None

    @property
    def data(self):
        if self._data is None:
            self._data = dispersion(self.cfg.model, self.cfg.grid)
        return self._data

    @property
    def measure(self):
        if self._measure is None:
            self._measure = self._build_measure()
        return self._measure

    def _build_measure(self):
        raw = self.cfg.raw
        if "two_temperature" in raw:
            m = load_two_temperature(raw["two_temperature"], self.data, "/two_temperature")
        elif "density" in raw:
            m = load_density(raw["density"], self.data, "/density")
        elif "temperatures" in raw:
            T = raw["temperatures"]
            if "T_plus" not in T or "T_minus" not in T:
                raise ConfigError("both T_plus and T_minus are required", "/temperatures")
            m = load_two_temperature({"minus": {"type": "gibbs", "T": T["T_minus"]},
                                      "plus": {"type": "gibbs", "T": T["T_plus"]},
                                      "cutoff_a": T.get("cutoff_a", 0)}, self.data, "/temperatures")
        else:
            raise ConfigError("an initial measure needs density, two_temperature or temperatures", "")
        if raw.get("clip") is not None:
            m = ClippedMeasure(m, self._clip_levels(m, float(raw["clip"])))
        return m

    def _clip_levels(self, m, k):
        q = m.plus if isinstance(m, TwoTempSpec) else m
        if isinstance(m, TwoTempSpec) and not np.allclose(m.plus.at(np.zeros(self.cfg.grid.d, int)),
                                                          m.minus.at(np.zeros(self.cfg.grid.d, int))):
            raise ConfigError("clipping is only defined for equal one-point variances", "/clip")
        var = np.diag(q.at(np.zeros(self.cfg.grid.d, int)))
        n = q.n
        return (k * np.sqrt(var[:n].mean()), k * np.sqrt(var[n:].mean()))

    @property
    def gibbs_temperatures(self):
        """``(T_plus, T_minus)`` when the measure is a glued pair of Gibbs densities."""
        raw = self.cfg.raw
        if raw.get("clip") is not None:
            return None
        if "temperatures" in raw and "two_temperature" not in raw and "density" not in raw:
            return float(raw["temperatures"]["T_plus"]), float(raw["temperatures"]["T_minus"])
        tt = raw.get("two_temperature")
        if tt and tt["plus"]["type"] == "gibbs" and tt["minus"]["type"] == "gibbs":
            return float(tt["plus"]["T"]), float(tt["minus"]["T"])
        return None

    def sites(self):
        d = self.cfg.grid.d
        raw = self.cfg.raw.get("sites")
        if raw:
            return [tuple(s) for s in raw]
        return [(0,) * (d - 1) + (s,) for s in (-1, 0, 1)]

    def test_function(self) -> TestFunction:
        spec = self.cfg.raw.get("test_function")
        if spec is None:
            raise ConfigError("task needs a test_function", "/test_function")
        data = self.data
        if "points" in spec:
            vals = np.zeros(data.grid.shape + (2 * data.n,))
            for i, p in enumerate(spec["points"]):
                if len(p["x"]) != data.d or p["component"] >= 2 * data.n:
                    raise ConfigError("point outside the model shape", f"/test_function/points/{i}")
                vals[data.grid.index(p["x"]) + (p["component"],)] += p["value"]
            return TestFunction.from_values(data, vals)
        if "theta0" not in spec or "width" not in spec:
            raise ConfigError("theta0 and width are required", "/test_function")
        theta0 = np.atleast_1d(spec["theta0"]).astype(float)
        if theta0.shape != (data.d,):
            raise ConfigError(f"theta0 needs {data.d} coordinates", "/test_function/theta0")
        return make_test_function(data, theta0, float(spec["width"]), spec.get("support_radius"),
                                  spec.get("weights"), profile=spec.get("profile", "taper"))


def _limit_pair(measure):
    if isinstance(measure, TwoTempSpec):
        return measure.plus, measure.minus
    if isinstance(measure, SpectralDensity):
        return measure, measure
    if isinstance(measure, ClippedMeasure) and not isinstance(measure.base, TwoTempSpec):
        cov = measure.covariance()
        return cov, cov
    return None


# ---------------------------------------------------------------- tasks

def _task_dispersion(ctx, w, res):
    d = ctx.cfg.grid.d
    w.write("dispersion.csv", [f"theta_{k + 1}" for k in range(d)] + ["branch", "omega"]
            + [f"velocity_{k + 1}" for k in range(d)] + ["critical"], dispersion_rows(ctx.data))


def _task_check(ctx, w, res):
    rep = check_conditions(ctx.cfg.model, ctx.data)
    w.write("conditions.csv", ["condition", "status", "witness"], rep.rows())
    if not rep.ok:
        res.failures.append("check: " + ", ".join(k for k, r in rep.results.items() if r.status == "fail"))


def _task_evolve(ctx, w, res):
    m = ctx.measure
    from .random_fields import sample_rng

    Y0 = FieldState.from_stacked(ctx.cfg.grid, m.draw([sample_rng(ctx.cfg.seed, 0)])[0])
    d = ctx.cfg.grid.d
    sites = ctx.cfg.grid.sites.reshape(-1, d)
    rows = []
    energies = []
    for t in ctx.cfg.times:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            Y = evolve(Y0, ctx.data, t)
        energies.append([t, hamiltonian(Y, ctx.cfg.model), int(abs(t) <= ctx.data.horizon())])
        u = Y.u.reshape(-1, Y.n)
        v = Y.v.reshape(-1, Y.n)
        for p in range(sites.shape[0]):
            for c in range(Y.n):
                rows.append([t, *sites[p].tolist(), c, u[p, c], v[p, c]])
    w.write("evolve.csv", ["t"] + [f"x_{k + 1}" for k in range(d)] + ["component", "u", "v"], rows)
    w.write("energy.csv", ["t", "hamiltonian", "horizon_ok"], energies)


def _task_covariance(ctx, w, res):
    cfg = ctx.cfg
    sites = ctx.sites()
    pairs = [(x, y) for x in sites for y in sites]
    rows = []
    header = None
    gaussian = isinstance(ctx.measure, (TwoTempSpec, SpectralDensity))
    for t in cfg.times:
        ests = [mc_covariance(ctx.measure, ctx.data, t, pairs, max(2, cfg.M), cfg.seed, threads=cfg.threads)]
        if gaussian:
            ests.append(exact_covariance_propagation(ctx.measure, ctx.data, t, sites))
        for e in ests:
            header = e.header() + ["horizon_ok"]
            rows += [r + [int(e.horizon_ok)] for r in e.rows()]
    w.write("covariance.csv", header, rows)


def _task_limit_covariance(ctx, w, res):
    pair = _limit_pair(ctx.measure)
    if pair is None:
        raise NumericalError("no closed-form limit covariance for this measure")
    L = limit_covariance(ctx.data, *pair)
    d = ctx.cfg.grid.d
    w.write("limit_covariance.csv", [f"theta_{k + 1}" for k in range(d)] + ["i", "j", "row", "col", "re", "im"],
            L.rows())


_CURRENT_HEADER = ["method", "k", "t", "x_offset", "value", "stderr", "horizon_ok", "verdict", "C"]


def _current_rows(ctx, res, with_mc: bool):
    cfg = ctx.cfg
    d = cfg.grid.d
    rows = []
    lim = None
    pair = _limit_pair(ctx.measure)
    if pair is not None:
        lim = limit_current(limit_covariance(ctx.data, *pair), ctx.data)
        for k in range(d):
            rows.append(["limit", k + 1, "inf", 0, lim[k], 0.0, 1, "", ""])
    temps = ctx.gibbs_temperatures
    if temps is not None:
        g = gibbs_limit_current(ctx.data, *temps)
        for k in range(d):
            rows.append(["gibbs", k + 1, "inf", 0, g[k], 0.0, 1, "", ""])
        lim = g
    if with_mc:
        offsets = sorted({0, cfg.grid.N // 8, -cfg.grid.N // 8})
        gaussian = isinstance(ctx.measure, (TwoTempSpec, SpectralDensity))
        for t in cfg.times:
            for k in range(1, d + 1):
                ests = mc_current(ctx.measure, cfg.model, t, k, offsets, max(2, cfg.M), cfg.seed,
                                  data=ctx.data, threads=cfg.threads)
                for e in ests:
                    rows.append(["mc", k, t, e.site[-1], e.value, e.stderr, int(e.horizon_ok), "", ""])
                if gaussian:
                    x = (0,) * d
                    needed = sorted({s for p in current_pairs(cfg.model, k, x) for s in p})
                    Q = exact_covariance_propagation(ctx.measure, ctx.data, t, needed)
                    e = mean_current_from_covariance(Q, cfg.model, k, x)
                    rows.append(["exact", k, t, 0, e.value, e.stderr, int(e.horizon_ok), "", ""])
                if lim is not None and k == d and t > 0:
                    seam = ests[offsets.index(0)]
                    band = max(2 * seam.stderr, 0.05 * abs(lim[-1]))
                    if abs(seam.value - lim[-1]) > band:
                        res.failures.append(f"current: mc seam current at t={t} is {seam.value:.4g}, "
                                            f"limit {lim[-1]:.4g}, band {band:.3g}")
    return rows, lim


def _task_current(ctx, w, res, second_law=False):
    # the second-law verdict rests on the limit current; Monte Carlo rows at the
    # configured times back it with the band check of the seam estimate
    rows, lim = _current_rows(ctx, res, with_mc=True)
    temps = ctx.gibbs_temperatures
    if second_law or "second_law" in ctx.cfg.observables:
        if lim is None or temps is None:
            raise NumericalError("second-law verdict needs two Gibbs temperatures")
        v = second_law_check(temps[0], temps[1], lim)
        rows.append(["second-law", ctx.cfg.grid.d, "inf", 0, v.j_d, 0.0, 1, "PASS" if v.passed else "FAIL",
                     "" if v.C is None else v.C])
        if not v.passed:
            res.failures.append(f"second_law: {v.reason}")
    w.write("current.csv", _CURRENT_HEADER, rows)


def _task_second_law(ctx, w, res):
    if "current" in ctx.cfg.observables:
        return  # written together with the current rows
    _task_current(ctx, w, res, second_law=True)


def _task_clt(ctx, w, res):
    cfg = ctx.cfg
    psi = ctx.test_function()
    lambdas = cfg.raw.get("lambdas", [0.5, 1.0, 2.0])
    rows = []
    for t in cfg.times:
        rep = clt_diagnostics(ctx.measure, ctx.data, psi, t, max(2, cfg.M), cfg.seed, lambdas=lambdas,
                              threads=cfg.threads)
        rows += [[t, *r] for r in rep.rows()]
        if t > 0:
            z = rep.ecf_zscores()
            if np.any(z > 5) or abs(rep.kurtosis) > 5 * rep.kurtosis_se:
                res.failures.append(f"clt: t={t} ECF z-scores {np.round(z, 2).tolist()}, "
                                    f"kurtosis {rep.kurtosis:.3g} +- {rep.kurtosis_se:.2g}")
    w.write("clt.csv", ["t", "row", "lambda", "value_re", "value_im", "target", "stderr_re", "stderr_im"], rows)


def _task_decay(ctx, w, res):
    psi = ctx.test_function()
    times = [t for t in ctx.cfg.times if t > 0]
    if len(times) < 2:
        raise ConfigError("decay needs at least two positive times", "/times")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        rep = decay_probe(ctx.data, psi, times)
    hor = ctx.data.horizon()
    w.write("decay.csv", ["row", "t", "sup_norm", "tail_ratio", "horizon_ok"],
            [r + [int(r[0] == "fit" or r[1] <= hor)] for r in rep.rows()])
    target = -ctx.cfg.grid.d / 2
    if abs(rep.slope - target) > 0.15:
        res.failures.append(f"decay: slope {rep.slope:.3f} outside {target} +- 0.15")
    if caught:
        res.manifest.setdefault("warnings", []).extend(str(c.message) for c in caught)


_RUNNERS = {
    "dispersion": _task_dispersion,
    "check": _task_check,
    "evolve": _task_evolve,
    "covariance": _task_covariance,
    "limit_covariance": _task_limit_covariance,
    "current": _task_current,
    "second_law": _task_second_law,
    "clt": _task_clt,
    "decay": _task_decay,
}


def run_experiment(config: ExperimentConfig | dict) -> RunResult:
    """Run every requested task, write CSVs and ``manifest.json`` into the output directory."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    writer = Writer(cfg.out_dir, cfg.precision)
    manifest = {
        "config_sha256": cfg.digest,
        "config": cfg.raw,
        "seeds": {"master_seed": cfg.seed, "members": cfg.M, "stream": "numpy default_rng([master_seed, i])"},
        "versions": {"phononflux": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "tasks": {},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    res = RunResult(manifest)
    ctx = _Context(cfg)
    horizon_flags = []
    for name in cfg.observables:
        try:
            if cfg.times and name in ("evolve", "covariance", "current", "clt", "decay"):
                bad = [t for t in cfg.times if abs(t) > ctx.data.horizon()]
                if bad:
                    horizon_flags.append({"task": name, "times": bad, "horizon": ctx.data.horizon()})
            _RUNNERS[name](ctx, writer, res)
            manifest["tasks"][name] = "ok"
        except ConfigError as exc:
            manifest["tasks"][name] = "error"
            res.errors.append({"task": name, "kind": "config", "message": str(exc), "pointer": exc.pointer})
        except (PhononfluxError, ArithmeticError, ValueError, KeyError, NotImplementedError) as exc:
            manifest["tasks"][name] = "error"
            entry = {"task": name, "kind": "numeric", "message": str(exc)}
            if isinstance(exc, CertificationError) and exc.suggestion is not None:
                entry["suggestion"] = exc.suggestion
            res.errors.append(entry)
    if horizon_flags:
        manifest["horizon_warnings"] = horizon_flags
    manifest["files"] = writer.files
    manifest["errors"] = res.errors
    manifest["assertion_failures"] = res.failures
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    with open(cfg.out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    return res
