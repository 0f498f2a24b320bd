"""Exact Euler characteristic curves, transforms and smooth transforms.

For a PL embedding whose sample set (vertices plus interior polyline points)
has heights ``h_i = <x_i, v>``, the Euler characteristic of the sublevel set
``{x : <x, v> <= t}`` is

    #{i : h_i <= t} - #{segments (i, j) : max(h_i, h_j) <= t}

so the ECC is a right-continuous integer step function with a +1 jump at every
sample height and a -1 jump at every segment's upper endpoint.  Everything in
this module is exact up to the floating-point heights themselves.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ectstab.complex import (
    CwComplex,
    DirectionSet,
    Embedding,
    require_valid,
    sample_graph,
    validate,
)
from ectstab.errors import IncompatibleError, RadiusError, TieError

__all__ = [
    "StepFunction",
    "EctField",
    "SectCurve",
    "SectField",
    "ecc",
    "ecc_from_graph",
    "euler_sublevel",
    "ect_field",
    "ect_distance",
    "ect_distances",
    "sect",
    "sect_field",
    "sect_distance",
    "sect_distances",
    "pl_l1_distance",
    "height_variation",
    "field_to_csv",
    "sect_to_csv",
]


class StepFunction:
    """Right-continuous piecewise-constant function of one real variable.

    ``f(t) = values[0]`` for ``t < breakpoints[0]`` and ``f(t) = values[i]``
    on ``[breakpoints[i-1], breakpoints[i])``.  Stored in canonical form:
    strictly increasing breakpoints, adjacent values distinct.
    """

    __slots__ = ("breakpoints", "values")

    def __init__(self, breakpoints, values):
        bp = np.asarray(breakpoints, dtype=float).reshape(-1)
        vals = np.asarray(values).reshape(-1)
        if len(vals) != len(bp) + 1:
            raise ValueError("need exactly one more value than breakpoints")
        if len(bp) > 1 and not np.all(np.diff(bp) > 0):
            raise ValueError("breakpoints must be strictly increasing")
        keep = vals[1:] != vals[:-1]
        bp = bp[keep]
        vals = np.concatenate([vals[:1], vals[1:][keep]])
        bp.setflags(write=False)
        vals.setflags(write=False)
        self.breakpoints = bp
        self.values = vals

    @classmethod
    def from_jumps(cls, positions, deltas, base=0) -> StepFunction:
        """Build ``base + sum_k deltas[k] * 1[t >= positions[k]]``; equal positions merge."""
        pos = np.asarray(positions, dtype=float).reshape(-1)
        dlt = np.asarray(deltas).reshape(-1)
        if len(pos) == 0:
            return cls([], [base])
        uniq, inverse = np.unique(pos, return_inverse=True)
        net = np.zeros(len(uniq), dtype=np.result_type(dlt.dtype, np.asarray(base).dtype))
        np.add.at(net, inverse, dlt)
        nz = net != 0
        uniq, net = uniq[nz], net[nz]
        values = np.concatenate([[base], base + np.cumsum(net)]).astype(net.dtype)
        return cls(uniq, values)

    @classmethod
    def constant(cls, value=0) -> StepFunction:
        return cls([], [value])

    @property
    def initial(self):
        return self.values[0].item()

    @property
    def final(self):
        return self.values[-1].item()

    def __call__(self, t):
        idx = np.searchsorted(self.breakpoints, t, side="right")
        out = self.values[idx]
        return out.item() if np.ndim(out) == 0 else out

    def _combine(self, other: StepFunction, op) -> StepFunction:
        knots = np.union1d(self.breakpoints, other.breakpoints)
        left = op(self.values[:1], other.values[:1])
        return StepFunction(knots, np.concatenate([left, op(self(knots), other(knots))]) if len(knots) else left)

    def __add__(self, other):
        if isinstance(other, StepFunction):
            return self._combine(other, np.add)
        return StepFunction(self.breakpoints, self.values + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, StepFunction):
            return self._combine(other, np.subtract)
        return StepFunction(self.breakpoints, self.values - other)

    def __neg__(self):
        return StepFunction(self.breakpoints, -self.values)

    def __mul__(self, c):
        return StepFunction(self.breakpoints, self.values * c)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, StepFunction):
            return NotImplemented
        return np.array_equal(self.breakpoints, other.breakpoints) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.breakpoints.tobytes(), self.values.tobytes()))

    def __repr__(self) -> str:
        return f"StepFunction(breakpoints={self.breakpoints.tolist()}, values={self.values.tolist()})"

    def pieces(self, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
        """Knots ``lo = k_0 < ... < k_m = hi`` and the constant value on each ``[k_i, k_{i+1})``."""
        inside = self.breakpoints[(self.breakpoints > lo) & (self.breakpoints < hi)]
        knots = np.concatenate([[lo], inside, [hi]])
        return knots, np.asarray(self(knots[:-1]))

    def integral(self, lo: float, hi: float, absolute: bool = False) -> float:
        if not hi > lo:
            return 0.0
        if np.isinf(lo) or np.isinf(hi):
            return self._infinite_integral(lo, hi, absolute)
        knots, vals = self.pieces(lo, hi)
        if absolute:
            vals = np.abs(vals)
        return float(np.sum(vals * np.diff(knots)))

    def _infinite_integral(self, lo, hi, absolute):
        if (np.isinf(lo) and self.values[0] != 0) or (np.isinf(hi) and self.values[-1] != 0):
            return float("inf")
        if len(self.breakpoints) == 0:
            return 0.0
        lo = self.breakpoints[0] if np.isinf(lo) else lo
        hi = self.breakpoints[-1] if np.isinf(hi) else hi
        return self.integral(lo, hi, absolute)

    def l1_distance(self, other: StepFunction, lo: float = -np.inf, hi: float = np.inf) -> float:
        return (self - other).integral(lo, hi, absolute=True)


def _heights(points: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """``points @ dirs.T`` summed in a fixed coordinate order (bitwise reproducible)."""
    h = np.zeros((points.shape[0], dirs.shape[0]))
    for k in range(points.shape[1]):
        h += points[:, k, None] * dirs[None, :, k]
    return h


def ecc_from_graph(heights: np.ndarray, segments: np.ndarray) -> StepFunction:
    tops = np.maximum(heights[segments[:, 0]], heights[segments[:, 1]]) if len(segments) else np.zeros(0)
    positions = np.concatenate([heights, tops])
    deltas = np.concatenate([np.ones(len(heights), dtype=np.int64), -np.ones(len(tops), dtype=np.int64)])
    return StepFunction.from_jumps(positions, deltas, base=0)


def ecc(cx: CwComplex, emb: Embedding, v) -> StepFunction:
    """Euler characteristic curve of the embedding in direction ``v``."""
    require_valid(cx, emb)
    pts, segs = sample_graph(cx, emb)
    v = np.asarray(v, dtype=float).reshape(1, -1)
    return ecc_from_graph(_heights(pts, v)[:, 0], segs)


def euler_sublevel(cx: CwComplex, emb: Embedding, v, t: float) -> int:
    """Euler characteristic of ``{x in X : <x, v> <= t}`` by explicit clipping.

    Independent of :func:`ecc`: every PL segment is clipped at height ``t``
    (a new vertex is created where it crosses), the resulting graph is built
    and its Betti numbers are counted with union-find, giving b0 - b1.
    """
    pts, segs = sample_graph(cx, emb)
    v = np.asarray(v, dtype=float).reshape(1, -1)
    h = _heights(pts, v)[:, 0]
    if np.any(h == t):
        raise TieError(f"threshold {t!r} coincides with a sample height")

    below = (h < t).tolist()
    # node ids: surviving sample points keep their index, crossings get fresh ids
    parent: dict[int, int] = {i: i for i, b in enumerate(below) if b}

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    n_edges = 0
    independent_cycles = 0
    fresh = len(pts)
    for i, j in segs.tolist():
        if below[i] and below[j]:
            a, b = i, j
        elif below[i] or below[j]:
            # the part of the segment under t is a half-open piece ending at a new point
            a = i if below[i] else j
            b = fresh
            parent[b] = b
            fresh += 1
        else:
            continue
        n_edges += 1
        ra, rb = find(a), find(b)
        if ra == rb:
            independent_cycles += 1
        else:
            parent[ra] = rb
    components = sum(1 for x in parent if find(x) == x)
    return components - independent_cycles


@dataclass(frozen=True, eq=False)
class EctField:
    directions: DirectionSet
    curves: tuple[StepFunction, ...]
    a: float
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.curves)

    def to_json(self) -> dict:
        return {
            "kind": "ect_field",
            "dim": self.directions.dim,
            "a": self.a,
            "directions": self.directions.vectors.tolist(),
            "direction_scheme": self.directions.descriptor(),
            "curves": [
                {"breakpoints": c.breakpoints.tolist(), "values": [int(x) if float(x).is_integer() else float(x) for x in c.values]}
                for c in self.curves
            ],
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, doc: dict) -> EctField:
        desc = doc.get("direction_scheme", {})
        dim = int(doc.get("dim", 1))
        vecs = np.array(doc["directions"], dtype=float).reshape(-1, dim)
        dirs = DirectionSet(vecs, desc.get("scheme", "custom"), desc.get("count", len(vecs)), desc.get("seed"))
        curves = tuple(StepFunction(c["breakpoints"], np.array(c["values"])) for c in doc["curves"])
        if len(curves) != len(dirs):
            raise IncompatibleError("number of curves does not match number of directions")
        return cls(dirs, curves, float(doc["a"]), dict(doc.get("meta", {})))


def _check_radius(cx: CwComplex, emb: Embedding, a: float) -> None:
    if not a > 0:
        raise RadiusError(f"bound a must be positive, got {a!r}")
    report = validate(cx, emb, radius=a)
    if not report.ok:
        if report.kinds() == {"outside radius"}:
            raise RadiusError(f"bound a={a!r} too small: {report}")
        require_valid(cx, emb)


def ect_field(
    cx: CwComplex,
    emb: Embedding,
    dirs: DirectionSet,
    a: float,
    workers: int = 1,
    meta: dict | None = None,
) -> EctField:
    """ECC in every direction of ``dirs``; output order follows ``dirs``."""
    _check_radius(cx, emb, a)
    if len(dirs) and dirs.dim != emb.dim:
        raise IncompatibleError(f"directions live in R^{dirs.dim}, embedding in R^{emb.dim}")
    pts, segs = sample_graph(cx, emb)
    if len(dirs) == 0:
        return EctField(dirs, (), float(a), dict(meta or {}))
    H = _heights(pts, dirs.vectors)
    job = lambda k: ecc_from_graph(H[:, k], segs)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            curves = tuple(pool.map(job, range(len(dirs))))
    else:
        curves = tuple(job(k) for k in range(len(dirs)))
    return EctField(dirs, curves, float(a), dict(meta or {}))


def _check_compatible(f1, f2) -> None:
    if f1.directions != f2.directions:
        raise IncompatibleError("fields use different direction sets")
    if f1.a != f2.a:
        raise IncompatibleError(f"fields use different bounds a ({f1.a!r} vs {f2.a!r})")


def ect_distances(f1: EctField, f2: EctField) -> np.ndarray:
    """Per-direction L1 distance on [-a, a]."""
    _check_compatible(f1, f2)
    a = f1.a
    return np.array([c1.l1_distance(c2, -a, a) for c1, c2 in zip(f1.curves, f2.curves)])


def ect_distance(f1: EctField, f2: EctField) -> float:
    """Max over the shared directions of the L1 distance in t.

    A lower bound for the supremum over the whole sphere.
    """
    d = ect_distances(f1, f2)
    return float(d.max()) if d.size else 0.0


@dataclass(frozen=True, eq=False)
class SectCurve:
    """Continuous piecewise-linear function on [-a, a]."""

    knots: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        return np.interp(t, self.knots, self.values)

    @property
    def a(self) -> float:
        return float(self.knots[-1])


def sect(curve: StepFunction, a: float) -> SectCurve:
    """Integral from -a of the mean-centred ECC, exact on each step."""
    knots, vals = curve.pieces(-a, a)
    widths = np.diff(knots)
    vals = vals.astype(float)
    mean = float(np.sum(vals * widths)) / (2.0 * a)
    values = np.concatenate([[0.0], np.cumsum((vals - mean) * widths)])
    return SectCurve(knots, values)


@dataclass(frozen=True, eq=False)
class SectField:
    directions: DirectionSet
    curves: tuple[SectCurve, ...]
    a: float


def sect_field(field_: EctField) -> SectField:
    return SectField(field_.directions, tuple(sect(c, field_.a) for c in field_.curves), field_.a)


def _abs_linear_integral(d0: np.ndarray, d1: np.ndarray, w: np.ndarray) -> float:
    """Sum over intervals of the exact integral of |linear| with end values d0, d1 and width w."""
    same = d0 * d1 >= 0
    out = np.where(same, 0.5 * (np.abs(d0) + np.abs(d1)) * w, 0.0)
    cross = ~same
    if np.any(cross):
        a0, a1 = np.abs(d0[cross]), np.abs(d1[cross])
        out[cross] = 0.5 * (a0 * a0 + a1 * a1) / (a0 + a1) * w[cross]
    return float(out.sum())


def pl_l1_distance(c1: SectCurve, c2: SectCurve) -> float:
    knots = np.union1d(c1.knots, c2.knots)
    diff = c1(knots) - c2(knots)
    return _abs_linear_integral(diff[:-1], diff[1:], np.diff(knots))


def sect_distances(s1: SectField, s2: SectField) -> np.ndarray:
    _check_compatible(s1, s2)
    return np.array([pl_l1_distance(c1, c2) for c1, c2 in zip(s1.curves, s2.curves)])


def sect_distance(s1, s2) -> float:
    """Max over directions of the exact L1 distance between SECT curves.

    Accepts :class:`SectField` or :class:`EctField` arguments.
    """
    if isinstance(s1, EctField):
        s1 = sect_field(s1)
    if isinstance(s2, EctField):
        s2 = sect_field(s2)
    d = sect_distances(s1, s2)
    return float(d.max()) if d.size else 0.0


def height_variation(points, v) -> float:
    """Total variation of the height function along an ordered polyline."""
    h = np.asarray(points, dtype=float) @ np.asarray(v, dtype=float)
    return float(np.abs(np.diff(h)).sum())


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def field_to_csv(field_: EctField) -> str:
    """Rows ``direction,t,value``: the ECC takes ``value`` from ``t`` on (0 before the first row)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["direction", "t", "value"])
    for k, c in enumerate(field_.curves):
        for t, val in zip(c.breakpoints, c.values[1:]):
            w.writerow([k, repr(float(t)), _fmt(val)])
    return buf.getvalue()


def sect_to_csv(sf: SectField) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["direction", "knot", "value"])
    for k, c in enumerate(sf.curves):
        for t, val in zip(c.knots, c.values):
            w.writerow([k, repr(float(t)), repr(float(val))])
    return buf.getvalue()
