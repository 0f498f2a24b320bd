"""Noisy closed curves, GP smoothing and the estimator-consistency experiment.

Flow for one run: sample a Fourier curve at ``n`` evenly spaced parameters,
add Gaussian noise, smooth each coordinate with a GP on the circle, resample
the posterior-mean curve at constant speed, and compare its ECT/SECT with a
dense PL discretisation of the true curve.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterator, Mapping

import numpy as np
from scipy.integrate import cumulative_simpson, quad
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize_scalar

from ectstab.complex import DirectionSet, closed_curve, make_directions
from ectstab.ect import EctField, SectField, _fmt, ect_distance, ect_field, sect_distance, sect_field
from ectstab.errors import DegenerateCurveError, EctError, ValidationError
from ectstab.gp import GpModel, Kernel, SineSquaredExpKernel, fit, posterior_mean, posterior_mean_derivative, sample_posterior

__all__ = [
    "FourierCurve",
    "PRESETS",
    "ArcLengthTable",
    "NoisySamples",
    "SmoothedCurve",
    "sample_noisy",
    "smooth",
    "reparameterize",
    "estimate_ect",
    "truth_field",
    "ExperimentConfig",
    "ExperimentResult",
    "run_consistency_experiment",
]

TWO_PI = 2.0 * math.pi
MIN_SIGMA2 = 1e-10


# --- arc-length tables -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ArcLengthTable:
    """Cumulative arc length over one period and its monotone inverse.

    ``s_nodes`` is the normalised cumulative length (0 to 1) at ``t_nodes``
    (0 to ``period``), from composite Simpson integration of the speed.
    """

    t_nodes: np.ndarray
    s_nodes: np.ndarray
    length: float
    inverse: PchipInterpolator

    @classmethod
    def from_speed(cls, speed: Callable[[np.ndarray], np.ndarray], grid_size: int = 4096, period: float = TWO_PI):
        if grid_size < 4:
            raise ValueError("grid_size must be >= 4")
        t = np.linspace(0.0, period, grid_size + 1)
        v = np.asarray(speed(t), dtype=float)
        vmax = float(v.max())
        if not np.isfinite(v).all() or vmax <= 0 or v.min() <= 1e-8 * vmax:
            raise DegenerateCurveError(f"speed vanishes on the grid (min {v.min():.3e}, max {vmax:.3e})")
        cum = cumulative_simpson(v, x=t, initial=0.0)
        if not (np.diff(cum) > 0).all():
            raise DegenerateCurveError("cumulative arc length is not strictly increasing")
        length = float(cum[-1])
        s = cum / length
        s[-1] = 1.0
        return cls(t, s, length, PchipInterpolator(s, t))

    def param_at(self, u) -> np.ndarray:
        """Original parameter at normalised arc length ``u`` in [0, 1]."""
        return self.inverse(np.clip(np.asarray(u, dtype=float), 0.0, 1.0))

    def arc_at(self, t) -> np.ndarray:
        return np.interp(t, self.t_nodes, self.s_nodes)


def _uniform(m: int) -> np.ndarray:
    return np.arange(m) / m


# --- Fourier curves ----------------------------------------------------------------


@dataclass(frozen=True)
class FourierCurve:
    """Closed planar curve ``gamma(t) = sum_j c_j exp(i j t)`` read as (Re, Im)."""

    freqs: tuple[int, ...]
    coeffs: tuple[complex, ...]

    def __post_init__(self):
        if len(self.freqs) != len(self.coeffs):
            raise ValidationError("freqs and coeffs differ in length")
        if len(set(self.freqs)) != len(self.freqs):
            raise ValidationError("duplicate frequency")
        if not all(math.isfinite(c.real) and math.isfinite(c.imag) for c in self.coeffs):
            raise ValidationError("non-finite coefficient")

    @classmethod
    def from_mapping(cls, coeffs: Mapping[int, complex]) -> FourierCurve:
        items = sorted((int(k), complex(v)) for k, v in coeffs.items())
        return cls(tuple(k for k, _ in items), tuple(v for _, v in items))

    def to_json(self) -> dict:
        return {
            "kind": "fourier_curve",
            "coefficients": [{"k": k, "re": c.real, "im": c.imag} for k, c in zip(self.freqs, self.coeffs)],
        }

    @classmethod
    def from_json(cls, doc) -> FourierCurve:
        """Accepts ``{"coefficients": [{"k", "re", "im"}, ...]}`` or a mapping ``{"k": [re, im]}``."""
        try:
            if isinstance(doc, Mapping) and "coefficients" in doc:
                entries = doc["coefficients"]
                mapping = {int(e["k"]): complex(float(e.get("re", 0.0)), float(e.get("im", 0.0))) for e in entries}
            elif isinstance(doc, Mapping):
                mapping = {}
                for k, v in doc.items():
                    re, im = (v, 0.0) if isinstance(v, (int, float)) else v
                    mapping[int(k)] = complex(float(re), float(im))
            else:
                raise TypeError(f"expected an object, got {type(doc).__name__}")
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed coefficient document: {exc}") from exc
        if not mapping:
            raise ValidationError("no coefficients")
        return cls.from_mapping(mapping)

    def _z(self, t, order: int = 0) -> np.ndarray:
        k = np.asarray(self.freqs, dtype=float)
        c = np.asarray(self.coeffs, dtype=complex) * (1j * k) ** order
        return np.exp(1j * np.multiply.outer(np.asarray(t, dtype=float), k)) @ c

    def eval(self, t, order: int = 0) -> np.ndarray:
        """Point (or ``order``-th derivative) at ``t``; shape (..., 2)."""
        z = self._z(t, order)
        return np.stack([z.real, z.imag], axis=-1)

    def speed(self, t) -> np.ndarray:
        return np.abs(self._z(t, 1))

    def curvature(self, t) -> np.ndarray:
        d1, d2 = self._z(t, 1), self._z(t, 2)
        return np.abs((np.conj(d1) * d2).imag) / np.abs(d1) ** 3

    def _check_regular(self, grid: int = 4096) -> None:
        v = self.speed(TWO_PI * _uniform(grid))
        if v.min() <= 1e-8 * max(1.0, v.max()):
            raise DegenerateCurveError(f"curve speed vanishes (min {v.min():.3e})")

    def curvature_bound(self, grid: int = 4096) -> float:
        """Max curvature: dense-grid maximum refined by a bounded local search."""
        self._check_regular(grid)
        t = TWO_PI * _uniform(grid)
        kap = self.curvature(t)
        i = int(np.argmax(kap))
        h = TWO_PI / grid
        res = minimize_scalar(lambda x: -float(self.curvature(x)), bounds=(t[i] - h, t[i] + h), method="bounded",
                              options={"xatol": 1e-12})
        return max(float(kap[i]), -float(res.fun))

    def length(self) -> float:
        """Arc length by adaptive quadrature (relative tolerance 1e-10)."""
        self._check_regular()
        val, _ = quad(lambda x: float(self.speed(x)), 0.0, TWO_PI, epsabs=0.0, epsrel=1e-10, limit=400)
        return float(val)

    def radius(self, grid: int = 4096) -> float:
        return float(np.linalg.norm(self.eval(TWO_PI * _uniform(grid)), axis=1).max())

    def is_simple(self, grid: int = 2048) -> bool:
        """No self-intersection of the ``grid``-gon inscribed at uniform parameters."""
        return not _polygon_self_intersects(self.eval(TWO_PI * _uniform(grid)))

    def arc_table(self, grid_size: int = 4096) -> ArcLengthTable:
        return ArcLengthTable.from_speed(self.speed, grid_size)

    def constant_speed_points(self, m: int, grid_size: int = 4096) -> np.ndarray:
        """``m`` points equally spaced in arc length, starting at t = 0."""
        return self.eval(self.arc_table(grid_size).param_at(_uniform(m)))


def _polygon_self_intersects(P: np.ndarray) -> bool:
    Q = np.roll(P, -1, axis=0)
    n = len(P)

    def orient(p, q, r):
        return np.sign((q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0]))

    for i in range(n):
        a, b = P[i], Q[i]
        o1, o2 = orient(a, b, P), orient(a, b, Q)
        o3, o4 = orient(P, Q, a), orient(P, Q, b)
        hit = (o1 * o2 < 0) & (o3 * o4 < 0)
        hit[[i, (i + 1) % n, (i - 1) % n]] = False
        if hit.any():
            return True
    return False


PRESETS: dict[str, FourierCurve] = {
    "circle": FourierCurve.from_mapping({1: 1.0}),
    "ellipse": FourierCurve.from_mapping({1: 1.5, -1: 0.5}),
    "blob": FourierCurve.from_mapping({-2: 0.05j, -1: 0.2, 1: 1.0, 2: 0.12, 3: 0.06}),
}


def resolve_curve(source) -> FourierCurve:
    if isinstance(source, FourierCurve):
        return source
    if isinstance(source, str):
        try:
            return PRESETS[source]
        except KeyError:
            raise ValidationError(f"unknown preset {source!r}; choose from {sorted(PRESETS)}") from None
    return FourierCurve.from_json(source)


# --- noise and smoothing ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NoisySamples:
    """Observations ``points[i] = gamma(params[i]) + noise``; ``params[i] = 2 pi i / n``."""

    params: np.ndarray
    points: np.ndarray
    sigma: float
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.params)

    def to_json(self) -> dict:
        return {
            "kind": "noisy_samples",
            "sigma": self.sigma,
            "seed": self.seed,
            "params": self.params.tolist(),
            "points": self.points.tolist(),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> NoisySamples:
        try:
            params = np.asarray(doc["params"], dtype=float)
            points = np.asarray(doc["points"], dtype=float).reshape(len(params), -1)
            return cls(params, points, float(doc.get("sigma", 0.0)), doc.get("seed"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed samples document: {exc}") from exc


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_noisy(curve: FourierCurve, n: int, sigma: float, seed=0) -> NoisySamples:
    """Evaluate at ``2 pi i / n`` and add i.i.d. N(0, sigma^2) noise per coordinate."""
    if n < 3:
        raise ValueError(f"need n >= 3 samples, got {n}")
    if not (sigma >= 0 and math.isfinite(sigma)):
        raise ValueError(f"sigma must be >= 0, got {sigma!r}")
    params = TWO_PI * _uniform(n)
    clean = curve.eval(params)
    noise = _rng(seed).normal(0.0, sigma, clean.shape) if sigma > 0 else np.zeros_like(clean)
    return NoisySamples(params, clean + noise, float(sigma), seed if isinstance(seed, int) else None)


@dataclass(frozen=True, eq=False)
class SmoothedCurve:
    """Posterior-mean curve of a multi-output GP (one output per coordinate)."""

    model: GpModel
    table: ArcLengthTable | None = None

    @property
    def reparameterized(self) -> bool:
        return self.table is not None

    @property
    def length(self) -> float | None:
        return None if self.table is None else self.table.length

    def eval(self, t) -> np.ndarray:
        return np.asarray(posterior_mean(self.model, np.atleast_1d(t)))

    def derivative(self, t) -> np.ndarray:
        return np.asarray(posterior_mean_derivative(self.model, np.atleast_1d(t)))

    def speed(self, t) -> np.ndarray:
        return np.linalg.norm(self.derivative(t), axis=-1)

    def probes(self, m: int) -> np.ndarray:
        """Original parameters of ``m`` points, equally spaced in arc length when
        reparameterised, else in the original parameter."""
        u = _uniform(m)
        return self.table.param_at(u) if self.table is not None else TWO_PI * u

    def points(self, m: int) -> np.ndarray:
        return self.eval(self.probes(m))


def smooth(samples: NoisySamples, kernel: Kernel | None = None, sigma2: float | None = None) -> SmoothedCurve:
    """GP smoothing of every coordinate; noise variance defaults to max(sigma^2, 1e-10)."""
    if len(np.unique(samples.params)) < 2:
        raise ValueError("need at least two distinct parameters")
    kernel = kernel or SineSquaredExpKernel()
    if sigma2 is None:
        sigma2 = max(samples.sigma**2, MIN_SIGMA2)
    return SmoothedCurve(fit(kernel, samples.params, samples.points, sigma2))


def reparameterize(sc: SmoothedCurve, grid_size: int = 4096) -> SmoothedCurve:
    """Attach the constant-velocity table built from the posterior-mean speed."""
    return replace(sc, table=ArcLengthTable.from_speed(sc.speed, grid_size))


def estimate_ect(sc: SmoothedCurve, m_points: int, dirs: DirectionSet, a: float, workers: int = 1) -> EctField:
    if m_points < 3:
        raise ValueError(f"m_points must be >= 3, got {m_points}")
    cx, emb = closed_curve(sc.points(m_points))
    meta = {"m_points": m_points, "reparameterized": sc.reparameterized}
    return ect_field(cx, emb, dirs, a, workers=workers, meta=meta)


def truth_field(curve: FourierCurve, dirs: DirectionSet, a: float, m_points: int = 4096, workers: int = 1) -> EctField:
    """ECT of the ``m_points``-gon inscribed at constant speed; its eps-density is recorded."""
    pts = curve.constant_speed_points(m_points)
    cx, emb = closed_curve(pts)
    eps = float(np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1).max())
    return ect_field(cx, emb, dirs, a, workers=workers, meta={"m_points": m_points, "reference_eps": eps})


# --- experiment ----------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    curve: object = "blob"
    sigma: float = 0.002
    ns: tuple[int, ...] = (20, 50, 100)
    seeds: tuple[int, ...] = tuple(range(20))
    directions: int = 64
    m_points: int = 256
    posterior_samples: int = 100
    a: float = 2.0
    master_seed: int = 0
    kernel: dict = field(default_factory=lambda: {"amplitude2": 1.0, "gamma": 2.0})
    sigma2: float | None = None
    grid_size: int = 4096
    truth_points: int = 4096
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "ns", tuple(int(n) for n in self.ns))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        problems = []
        if not self.ns or min(self.ns) < 3:
            problems.append("ns must be non-empty with every n >= 3")
        if not self.seeds:
            problems.append("seeds must be non-empty")
        if not (self.sigma >= 0):
            problems.append("sigma must be >= 0")
        if self.directions < 1:
            problems.append("directions must be >= 1")
        if self.m_points < 3:
            problems.append("m_points must be >= 3")
        if self.posterior_samples < 0:
            problems.append("posterior_samples must be >= 0")
        if not (self.a > 0):
            problems.append("a must be positive")
        if self.workers < 1:
            problems.append("workers must be >= 1")
        if problems:
            raise ValidationError("; ".join(problems))
        resolve_curve(self.curve)

    @classmethod
    def from_dict(cls, doc: Mapping) -> ExperimentConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**dict(doc))
        except TypeError as exc:
            raise ValidationError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ns"], d["seeds"] = list(self.ns), list(self.seeds)
        return d

    def gp_sigma2(self) -> float:
        return self.sigma2 if self.sigma2 is not None else max(self.sigma**2, MIN_SIGMA2)


CSV_COLUMNS = ("n", "seed", "kind", "ect_dist", "sect_dist", "sup_gap", "arc_length")


@dataclass(frozen=True)
class Row:
    n: int
    seed: int
    kind: str
    ect_dist: float
    sect_dist: float
    sup_gap: float
    arc_length: float

    def cells(self) -> list[str]:
        return [str(self.n), str(self.seed), self.kind] + [_fmt(float(x)) for x in
                                                           (self.ect_dist, self.sect_dist, self.sup_gap, self.arc_length)]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[Row]
    failures: list[dict]
    truth: dict

    def summary(self) -> dict:
        per_n = {}
        for n in self.config.ns:
            est = [r for r in self.rows if r.n == n and r.kind == "estimate" and math.isfinite(r.sect_dist)]
            if not est:
                per_n[str(n)] = {"runs": 0}
                continue
            per_n[str(n)] = {
                "runs": len(est),
                "median_ect_dist": float(np.median([r.ect_dist for r in est])),
                "median_sect_dist": float(np.median([r.sect_dist for r in est])),
                "median_sup_gap": float(np.median([r.sup_gap for r in est])),
                "median_length_error": float(np.median([abs(r.arc_length - self.truth["length"]) for r in est])),
            }
        return {"per_n": per_n, "failures": self.failures, "truth": self.truth}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow(r.cells())
        return buf.getvalue()


@dataclass(frozen=True, eq=False)
class _Context:
    curve: FourierCurve
    dirs: DirectionSet
    truth: EctField
    truth_sect: SectField
    truth_points: np.ndarray
    truth_length: float


def _build_context(cfg: ExperimentConfig) -> _Context:
    curve = resolve_curve(cfg.curve)
    dirs = make_directions(2, cfg.directions, cfg.master_seed)
    truth = truth_field(curve, dirs, cfg.a, cfg.truth_points)
    return _Context(curve, dirs, truth, sect_field(truth), curve.constant_speed_points(cfg.m_points, cfg.grid_size),
                    curve.length())


def _compare(ctx: _Context, cfg: ExperimentConfig, pts: np.ndarray, n: int, seed: int, kind: str, length: float) -> Row:
    cx, emb = closed_curve(pts)
    fld = ect_field(cx, emb, ctx.dirs, cfg.a)
    gap = float(np.linalg.norm(pts - ctx.truth_points, axis=1).max())
    return Row(n, seed, kind, ect_distance(fld, ctx.truth), sect_distance(sect_field(fld), ctx.truth_sect), gap, length)


def _run_one(ctx: _Context, cfg: ExperimentConfig, n: int, seed: int) -> tuple[list[Row], dict | None]:
    noise_ss, post_ss = np.random.SeedSequence([cfg.master_seed, n, seed]).spawn(2)
    try:
        samples = sample_noisy(ctx.curve, n, cfg.sigma, np.random.default_rng(noise_ss))
        kernel = SineSquaredExpKernel(**cfg.kernel)
        sc = reparameterize(smooth(samples, kernel, cfg.gp_sigma2()), cfg.grid_size)
        t = sc.probes(cfg.m_points)
        rows = [_compare(ctx, cfg, sc.eval(t), n, seed, "estimate", sc.length)]
        if cfg.posterior_samples:
            draws = sample_posterior(sc.model, t, cfg.posterior_samples, np.random.default_rng(post_ss))
            for k, pts in enumerate(draws):
                pl_len = float(np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1).sum())
                rows.append(_compare(ctx, cfg, pts, n, seed, f"posterior_{k}", pl_len))
        return rows, None
    except (EctError, ValueError, np.linalg.LinAlgError) as exc:
        nan = float("nan")
        return [Row(n, seed, "estimate", nan, nan, nan, nan)], {"n": n, "seed": seed, "error": f"{type(exc).__name__}: {exc}"}


_WORKER: dict = {}


def _worker_init(cfg_dict: dict) -> None:
    cfg = ExperimentConfig.from_dict(cfg_dict)
    _WORKER["cfg"], _WORKER["ctx"] = cfg, _build_context(cfg)


def _worker_task(job: tuple[int, int]):
    return _run_one(_WORKER["ctx"], _WORKER["cfg"], *job)


def iter_runs(cfg: ExperimentConfig, ctx: _Context | None = None) -> Iterator[tuple[list[Row], dict | None]]:
    """Yield per-(n, seed) results in config order, whatever the worker count."""
    jobs = [(n, s) for n in cfg.ns for s in cfg.seeds]
    if cfg.workers == 1:
        ctx = ctx or _build_context(cfg)
        for job in jobs:
            yield _run_one(ctx, cfg, *job)
        return
    with ProcessPoolExecutor(max_workers=cfg.workers, initializer=_worker_init, initargs=(cfg.to_dict(),)) as pool:
        yield from pool.map(_worker_task, jobs)


def run_consistency_experiment(cfg: ExperimentConfig, csv_stream=None) -> ExperimentResult:
    """Run every (n, seed) pair.  If ``csv_stream`` is given, rows are written and
    flushed as each run completes, so an interrupted run leaves a partial CSV."""
    ctx = _build_context(cfg)
    writer = None
    if csv_stream is not None:
        writer = csv.writer(csv_stream, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
    rows, failures = [], []
    for run_rows, failure in iter_runs(cfg, ctx):
        rows.extend(run_rows)
        if failure:
            failures.append(failure)
        if writer is not None:
            writer.writerows(r.cells() for r in run_rows)
            csv_stream.flush()
    truth = {
        "length": ctx.truth_length,
        "curvature_bound": ctx.curve.curvature_bound(),
        "reference_points": cfg.truth_points,
        "reference_eps": ctx.truth.meta["reference_eps"],
        "directions": ctx.dirs.descriptor(),
    }
    return ExperimentResult(cfg, rows, failures, truth)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, Mapping):
        raise ValidationError("config must be a JSON object")
    return ExperimentConfig.from_dict(doc)
