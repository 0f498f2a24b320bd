"""Closed-form stability and approximation bounds for ECTs of embedded 1-complexes.

All functions are pure.  Curvature bounds ``M`` are caller-supplied: a PL
polyline has no curvature, so for sampled smooth curves either pass the
analytic value or the (heuristic) circumscribed-circle estimate from
:func:`ectstab.complex.max_discrete_curvature`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy.optimize import minimize_scalar

from ectstab.complex import CwComplex, Embedding, edge_polyline
from ectstab.errors import IncompatibleError

__all__ = [
    "StabilityInput",
    "BoundReport",
    "n_lambda",
    "g_lambda",
    "stability_bound",
    "local_ect_bound",
    "local_profile",
    "chord_lower_bound",
    "chord_cubic_bound",
    "coord_variation_bound",
    "interpolation_bound",
    "convexity_cap",
    "metric_upper_bound",
]

_SNAP = 1e-12


def _positive(**kw) -> None:
    for name, val in kw.items():
        if not (val > 0 and math.isfinite(val)):
            raise ValueError(f"{name} must be positive and finite, got {val!r}")


def _ceil_snapped(x: mpmath.mpf) -> int:
    r = mpmath.nint(x)
    if abs(x - r) <= _SNAP:
        return int(r)
    return int(mpmath.ceil(x))


def n_lambda(M: float, L: float, eps: float) -> int:
    """Number of pieces a cell of length ``L`` is cut into by the stability argument.

    ``max(ceil((M^2 L^3 / (24 eps))^(1/3)), ceil(L M / pi))``, at least 1.
    Evaluated with 50 significant digits; arguments within 1e-12 of an
    integer are snapped to it before taking the ceiling.
    """
    _positive(M=M, L=L, eps=eps)
    with mpmath.workdps(50):
        m, l, e = mpmath.mpf(M), mpmath.mpf(L), mpmath.mpf(eps)
        first = mpmath.cbrt(m * m * l**3 / (24 * e))
        second = l * m / mpmath.pi
        return max(_ceil_snapped(first), _ceil_snapped(second), 1)


def g_lambda(M: float, L: float, eps: float) -> float:
    """Per-cell contribution to the stability bound."""
    n = n_lambda(M, L, eps)
    if L / n > 2 * eps:
        return 8.0 * math.sqrt(L * n * eps) + n * eps
    return 11.0 * n * eps


@dataclass(frozen=True)
class StabilityInput:
    lengths: tuple[float, ...]
    M: float
    n_vertices: int
    eps: float

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(float(x) for x in self.lengths))
        if self.n_vertices < 0:
            raise ValueError("n_vertices must be >= 0")
        for L in self.lengths:
            _positive(L=L)
        _positive(M=self.M, eps=self.eps)


@dataclass(frozen=True)
class BoundReport:
    n: tuple[int, ...]
    G: tuple[float, ...]
    vertex_term: float
    total: float

    def to_dict(self) -> dict:
        return {"n_lambda": list(self.n), "G_lambda": list(self.G), "vertex_term": self.vertex_term, "total": self.total}


def stability_bound(inp: StabilityInput) -> BoundReport:
    """``|Z_0| eps + sum_lambda G_lambda(eps)``: bound on the ECT distance of two
    embeddings within ``eps`` of each other when the first has curvature <= M."""
    n = tuple(n_lambda(inp.M, L, inp.eps) for L in inp.lengths)
    G = tuple(g_lambda(inp.M, L, inp.eps) for L in inp.lengths)
    vertex_term = inp.n_vertices * inp.eps
    return BoundReport(n, G, vertex_term, vertex_term + math.fsum(G))


def local_ect_bound(L: float, eps: float) -> float:
    """ECT distance cap for an almost-straight path of chord ``L`` and a path within ``eps``."""
    if L < 0:
        raise ValueError(f"L must be >= 0, got {L!r}")
    _positive(eps=eps)
    return 8.0 * math.sqrt(L * eps) if L > 2 * eps else 10.0 * eps


def local_profile(theta, L: float, eps: float):
    """The angle-dependent estimate that :func:`local_ect_bound` caps.

    Depends on ``theta`` only through |cos theta| and |sin theta|, so it is
    even and pi-periodic; vectorised over ``theta``.
    """
    th = np.asarray(theta, dtype=float)
    c, s = np.abs(np.cos(th)), np.abs(np.sin(th))
    first = np.sqrt(np.maximum((L + 2 * eps) ** 2 - np.maximum(0.0, L * c - 2 * eps) ** 2, 0.0))
    second = np.sqrt(np.maximum((L + eps) ** 2 - (L * c) ** 2, 0.0))
    return first + second - 2 * np.maximum(0.0, L * s - 2 * eps) + np.maximum(0.0, eps - L * s)


def _check_eps_curv(M: float, eps: float) -> None:
    if M < 0:
        raise ValueError(f"M must be >= 0, got {M!r}")
    _positive(eps=eps)
    if M > 0 and eps >= math.pi / M:
        raise ValueError(f"need eps < pi/M = {math.pi / M!r}, got {eps!r}")


def chord_lower_bound(M: float, eps: float) -> float:
    """Shortest possible chord of an arc of length ``eps`` with curvature <= M."""
    _check_eps_curv(M, eps)
    if M == 0:
        return eps
    return 2.0 / M * math.sin(M * eps / 2.0)


def chord_cubic_bound(M: float, eps: float) -> float:
    """Cubic under-estimate ``eps - M^2 eps^3 / 24`` of :func:`chord_lower_bound`."""
    _check_eps_curv(M, eps)
    return eps - M * M * eps**3 / 24.0


def coord_variation_bound(L: float, Lx: float) -> float:
    """Variation bound of a transverse coordinate of a path of length L whose
    first coordinate advances by Lx."""
    if Lx < 0 or L < 0:
        raise ValueError("lengths must be non-negative")
    if Lx > L:
        raise ValueError(f"Lx={Lx!r} exceeds L={L!r}")
    return math.sqrt(L * L - Lx * Lx)


def interpolation_bound(M: float, L_total: float, eps: float) -> float:
    """ECT error of the PL interpolant on an eps-dense sample: ``M L eps / sqrt(12)``."""
    _check_eps_curv(M, eps)
    _positive(L_total=L_total)
    return M * L_total * eps / math.sqrt(12.0)


def convexity_cap(L: float, eps: float, f_at_eps: float) -> float:
    """Max of ``sum f(x_i)`` over parts ``0 <= x_i <= eps`` summing to L, for convex f with f(0)=0."""
    _positive(L=L, eps=eps)
    if f_at_eps < 0:
        raise ValueError("f_at_eps must be >= 0")
    return L * f_at_eps / eps


# --- metric upper bound --------------------------------------------------------


def _arclength_params(line: np.ndarray) -> tuple[np.ndarray, float]:
    seg = np.linalg.norm(np.diff(line, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = float(cum[-1])
    return (cum / total if total > 0 else np.linspace(0, 1, len(line))), total


def _interp(params: np.ndarray, line: np.ndarray, s: np.ndarray) -> np.ndarray:
    return np.column_stack([np.interp(s, params, line[:, k]) for k in range(line.shape[1])])


def _cell_gap(lineX: np.ndarray, lineY: np.ndarray) -> tuple[float, float]:
    """(sup-norm gap, arc-length difference) of two polylines under constant-velocity parametrisation.

    The difference of two PL maps is linear between merged knots, so the sup
    is attained at a knot and this value is exact.
    """
    sX, LX = _arclength_params(lineX)
    sY, LY = _arclength_params(lineY)
    knots = np.union1d(sX, sY)
    gap = np.linalg.norm(_interp(sX, lineX, knots) - _interp(sY, lineY, knots), axis=1).max()
    return float(gap), abs(LX - LY)


def _closed_gap(sX, lineX, sY, lineY, shift: float, reverse: bool) -> float:
    # Y reparametrised as s -> Y((+-s + shift) mod 1); its knots in s are where the argument hits sY
    if reverse:
        yknots = np.mod(shift - sY, 1.0)
    else:
        yknots = np.mod(sY - shift, 1.0)
    knots = np.union1d(sX, np.concatenate([yknots, [0.0, 1.0]]))
    arg = np.mod((-knots if reverse else knots) + shift, 1.0)
    px = _interp(sX, lineX, knots)
    py = _interp(sY, lineY, arg)
    return float(np.linalg.norm(px - py, axis=1).max())


def metric_upper_bound(
    cx: CwComplex,
    embX: Embedding,
    embY: Embedding,
    rotation_search: bool = False,
    grid: int = 512,
) -> float:
    """An eps witnessing ``d(X, Y) <= eps`` for the arc-length-sensitive metric.

    Uses the constant-velocity parametrisation of each cell on both sides and
    returns ``max(max_cell |L_X - L_Y|, sup |h_X - h_Y|)``.  This is an upper
    bound of the metric, which is an infimum over all such correspondences.
    For a single-loop complex (one 0-cell, one loop) and ``rotation_search``,
    the base point and orientation of Y's parametrisation are optimised over
    ``grid`` shifts followed by a bounded local refinement.
    """
    if embX.dim != embY.dim:
        raise IncompatibleError("embeddings live in different dimensions")
    for e in cx.edges:
        if (len(embX.interior(e.id)) == 0) != (len(embY.interior(e.id)) == 0) and e.is_loop:
            raise IncompatibleError(f"loop {e.id!r} is degenerate in one embedding")
    worst = 0.0
    for v in cx.vertices:
        if not any(v in (e.u, e.v) for e in cx.edges):
            worst = max(worst, float(np.linalg.norm(embX.positions[v] - embY.positions[v])))

    single_loop = len(cx.vertices) == 1 and len(cx.edges) == 1 and cx.edges[0].is_loop
    if rotation_search and single_loop:
        e = cx.edges[0]
        lineX = edge_polyline(cx, embX, e.id)
        lineY = edge_polyline(cx, embY, e.id)
        sX, LX = _arclength_params(lineX)
        sY, LY = _arclength_params(lineY)
        best = (math.inf, 0.0, False)
        for reverse in (False, True):
            for shift in np.arange(grid) / grid:
                g = _closed_gap(sX, lineX, sY, lineY, float(shift), reverse)
                if g < best[0]:
                    best = (g, float(shift), reverse)
        gap, shift, reverse = best
        res = minimize_scalar(
            lambda s: _closed_gap(sX, lineX, sY, lineY, s, reverse),
            bounds=(shift - 1.0 / grid, shift + 1.0 / grid),
            method="bounded",
            options={"xatol": 1e-10},
        )
        gap = min(gap, float(res.fun))
        return max(worst, gap, abs(LX - LY))

    for e in cx.edges:
        gap, dl = _cell_gap(edge_polyline(cx, embX, e.id), edge_polyline(cx, embY, e.id))
        worst = max(worst, gap, dl)
    return worst
