"""Finite one-dimensional CW complexes and their piecewise-linear embeddings.

A :class:`CwComplex` is the combinatorial part (0-cells and 1-cells, loops and
parallel edges allowed).  An :class:`Embedding` realises it in R^d: every
vertex gets a position and every edge an ordered list of interior points, so
each 1-cell maps to the polyline ``pos(u), interior..., pos(v)``.  The vertices
together with the interior points form the sample set used by the exact ECT
engine; loops must carry at least one interior point so that this sample set
meets every 1-cell.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from ectstab.errors import ValidationError

__all__ = [
    "Edge",
    "CwComplex",
    "Embedding",
    "Violation",
    "ValidationReport",
    "DirectionSet",
    "validate",
    "require_valid",
    "sample_graph",
    "edge_polyline",
    "edge_arc_length",
    "arc_lengths",
    "total_length",
    "epsilon_density",
    "embedding_radius",
    "refine",
    "transform",
    "restrict",
    "discrete_curvature",
    "max_discrete_curvature",
    "make_directions",
    "polygon",
    "closed_curve",
    "path",
    "from_json",
    "to_json",
    "load_json",
    "dump_json",
]


@dataclass(frozen=True)
class Edge:
    id: str
    u: str
    v: str

    @property
    def is_loop(self) -> bool:
        return self.u == self.v


@dataclass(frozen=True)
class CwComplex:
    vertices: tuple[str, ...]
    edges: tuple[Edge, ...]

    def __init__(self, vertices: Iterable[str], edges: Iterable[Edge | tuple[str, str, str]]):
        object.__setattr__(self, "vertices", tuple(str(v) for v in vertices))
        object.__setattr__(
            self, "edges", tuple(e if isinstance(e, Edge) else Edge(*map(str, e)) for e in edges)
        )

    @property
    def euler_characteristic(self) -> int:
        return len(self.vertices) - len(self.edges)

    def edge(self, edge_id: str) -> Edge:
        for e in self.edges:
            if e.id == edge_id:
                return e
        raise KeyError(f"unknown edge id {edge_id!r}")

    def is_connected(self) -> bool:
        if not self.vertices:
            return True
        adj: dict[str, set[str]] = {v: set() for v in self.vertices}
        for e in self.edges:
            if e.u in adj and e.v in adj:
                adj[e.u].add(e.v)
                adj[e.v].add(e.u)
        seen = {self.vertices[0]}
        stack = [self.vertices[0]]
        while stack:
            for w in adj[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == len(adj)

    def is_single_cycle(self) -> bool:
        """True when the complex is homeomorphic to a circle (a connected 2-regular multigraph)."""
        if not self.edges or len(self.vertices) != len(self.edges):
            return False
        degree = dict.fromkeys(self.vertices, 0)
        for e in self.edges:
            degree[e.u] += 1
            degree[e.v] += 1
        return all(d == 2 for d in degree.values()) and self.is_connected()

    def subcomplex(self, vertices: Iterable[str], edge_ids: Iterable[str]) -> CwComplex:
        """Subcomplex on the given edges plus the given vertices (edge endpoints are added)."""
        wanted = set(edge_ids)
        edges = [e for e in self.edges if e.id in wanted]
        keep = set(vertices)
        for e in edges:
            keep.update((e.u, e.v))
        return CwComplex([v for v in self.vertices if v in keep], edges)


def _as_points(x, dim: int | None = None) -> np.ndarray:
    arr = np.array(x, dtype=float)
    if arr.size == 0:
        arr = arr.reshape(0, dim or 0)
    if arr.ndim == 1 and dim is not None and arr.size == dim:
        arr = arr.reshape(1, dim)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Embedding:
    """PL realisation of a :class:`CwComplex` in R^dim."""

    dim: int
    positions: Mapping[str, np.ndarray]
    polylines: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __init__(self, dim: int, positions: Mapping, polylines: Mapping | None = None):
        dim = int(dim)
        pos = {}
        for k, p in positions.items():
            arr = np.array(p, dtype=float).reshape(-1)
            arr.setflags(write=False)
            pos[str(k)] = arr
        lines = {str(k): _as_points(p, dim) for k, p in (polylines or {}).items()}
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "polylines", lines)

    def interior(self, edge_id: str) -> np.ndarray:
        pts = self.polylines.get(edge_id)
        if pts is None:
            return np.zeros((0, self.dim))
        return pts


@dataclass(frozen=True)
class Violation:
    kind: str
    id: str
    message: str

    def __str__(self) -> str:
        return f"{self.kind} [{self.id}]: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [{"kind": v.kind, "id": v.id, "message": v.message} for v in self.violations],
        }

    def __str__(self) -> str:
        if self.ok:
            return "valid"
        return "; ".join(str(v) for v in self.violations)


def validate(cx: CwComplex, emb: Embedding, radius: float | None = None) -> ValidationReport:
    """Check every structural and geometric invariant, collecting all violations."""
    out: list[Violation] = []
    add = lambda kind, id_, msg: out.append(Violation(kind, str(id_), msg))  # noqa: E731

    if emb.dim < 1:
        add("bad dimension", "dim", f"ambient dimension must be >= 1, got {emb.dim}")
    vset = set()
    for v in cx.vertices:
        if v in vset:
            add("duplicate vertex", v, "vertex id appears more than once")
        vset.add(v)
    eset = set()
    for e in cx.edges:
        if e.id in eset:
            add("duplicate edge", e.id, "edge id appears more than once")
        eset.add(e.id)
        for end in (e.u, e.v):
            if end not in vset:
                add("dangling endpoint", e.id, f"endpoint {end!r} is not a vertex")

    for v in cx.vertices:
        p = emb.positions.get(v)
        if p is None:
            add("missing position", v, "vertex has no position")
        elif p.shape != (emb.dim,):
            add("dimension mismatch", v, f"position has {p.size} coordinates, expected {emb.dim}")
        elif not np.all(np.isfinite(p)):
            add("non-finite coordinate", v, "position is not finite")
    for k in emb.positions:
        if k not in vset:
            add("unknown vertex", k, "position given for a vertex not in the complex")
    for k in emb.polylines:
        if k not in eset:
            add("unknown edge", k, "polyline given for an edge not in the complex")

    for e in cx.edges:
        inner = emb.interior(e.id)
        if inner.ndim != 2 or inner.shape[1] != emb.dim:
            add("dimension mismatch", e.id, f"interior points must have {emb.dim} coordinates")
            continue
        if not np.all(np.isfinite(inner)):
            add("non-finite coordinate", e.id, "interior point is not finite")
            continue
        if e.is_loop and len(inner) == 0:
            add("degenerate loop", e.id, "loop edge needs at least one interior point")
        if e.u not in emb.positions or e.v not in emb.positions:
            continue
        pu, pv = emb.positions[e.u], emb.positions[e.v]
        if pu.shape != (emb.dim,) or pv.shape != (emb.dim,):
            continue
        line = np.vstack([pu, inner, pv])
        seg = np.linalg.norm(np.diff(line, axis=0), axis=1)
        bad = np.flatnonzero(seg <= 0.0)
        if e.is_loop and len(inner) == 0:
            continue
        for i in bad:
            add("zero-length segment", e.id, f"segment {int(i)} has coincident endpoints")

    if radius is not None and not out:
        pts, _ = sample_graph(cx, emb)
        if len(pts):
            norms = np.linalg.norm(pts, axis=1)
            for i in np.flatnonzero(norms > radius):
                add(
                    "outside radius",
                    _sample_label(cx, emb, int(i)),
                    f"point {pts[i].tolist()} has norm {float(norms[i])!r} > {float(radius)!r}",
                )
    return ValidationReport(tuple(out))


def require_valid(cx: CwComplex, emb: Embedding, radius: float | None = None) -> None:
    report = validate(cx, emb, radius)
    if not report.ok:
        raise ValidationError(str(report))


def sample_graph(cx: CwComplex, emb: Embedding) -> tuple[np.ndarray, np.ndarray]:
    """Flatten the embedding into sample points and PL segments.

    Returns ``(points, segments)`` where ``points`` is ``(N, d)`` (vertices in
    complex order, then interior points edge by edge) and ``segments`` is an
    ``(S, 2)`` integer array of point indices, one row per PL segment.
    """
    index = {v: i for i, v in enumerate(cx.vertices)}
    chunks = [np.array([emb.positions[v] for v in cx.vertices], dtype=float).reshape(-1, emb.dim)]
    segs = []
    n = len(cx.vertices)
    for e in cx.edges:
        inner = emb.interior(e.id)
        k = len(inner)
        ids = [index[e.u], *range(n, n + k), index[e.v]]
        segs.extend(zip(ids[:-1], ids[1:]))
        if k:
            chunks.append(inner)
        n += k
    points = np.vstack(chunks) if chunks else np.zeros((0, emb.dim))
    segments = np.array(segs, dtype=np.int64).reshape(-1, 2)
    return points, segments


def _sample_label(cx: CwComplex, emb: Embedding, i: int) -> str:
    if i < len(cx.vertices):
        return cx.vertices[i]
    i -= len(cx.vertices)
    for e in cx.edges:
        k = len(emb.interior(e.id))
        if i < k:
            return f"{e.id}#{i}"
        i -= k
    return str(i)


def edge_polyline(cx: CwComplex, emb: Embedding, edge_id: str) -> np.ndarray:
    e = cx.edge(edge_id)
    return np.vstack([emb.positions[e.u], emb.interior(e.id), emb.positions[e.v]])


def edge_arc_length(cx: CwComplex, emb: Embedding, edge_id: str) -> float:
    line = edge_polyline(cx, emb, edge_id)
    return float(np.linalg.norm(np.diff(line, axis=0), axis=1).sum())


def arc_lengths(cx: CwComplex, emb: Embedding) -> dict[str, float]:
    return {e.id: edge_arc_length(cx, emb, e.id) for e in cx.edges}


def total_length(cx: CwComplex, emb: Embedding) -> float:
    return float(sum(arc_lengths(cx, emb).values()))


def epsilon_density(cx: CwComplex, emb: Embedding) -> float:
    """Longest single PL segment: the smallest eps for which the sample set is eps-dense."""
    pts, segs = sample_graph(cx, emb)
    if len(segs) == 0:
        return 0.0
    return float(np.linalg.norm(pts[segs[:, 1]] - pts[segs[:, 0]], axis=1).max())


def embedding_radius(cx: CwComplex, emb: Embedding) -> float:
    pts, _ = sample_graph(cx, emb)
    return float(np.linalg.norm(pts, axis=1).max()) if len(pts) else 0.0


def refine(cx: CwComplex, emb: Embedding, k: int) -> Embedding:
    """Insert ``k`` equally spaced points inside every PL segment."""
    if k < 0:
        raise ValueError("k must be >= 0")
    fractions = np.arange(1, k + 1) / (k + 1)
    polylines = {}
    for e in cx.edges:
        line = edge_polyline(cx, emb, e.id)
        pieces = []
        for j in range(len(line) - 1):
            if j > 0:
                pieces.append(line[j : j + 1])
            pieces.append(line[j] + fractions[:, None] * (line[j + 1] - line[j]))
        polylines[e.id] = np.vstack(pieces) if pieces else np.zeros((0, emb.dim))
    return Embedding(emb.dim, emb.positions, polylines)


def transform(emb: Embedding, rotation=None, shift=None) -> Embedding:
    """Apply ``x -> R x + shift`` to every point."""
    R = np.eye(emb.dim) if rotation is None else np.asarray(rotation, dtype=float)
    b = np.zeros(emb.dim) if shift is None else np.asarray(shift, dtype=float)
    return Embedding(
        emb.dim,
        {k: R @ p + b for k, p in emb.positions.items()},
        {k: (p @ R.T + b) if len(p) else p for k, p in emb.polylines.items()},
    )


def restrict(emb: Embedding, cx: CwComplex) -> Embedding:
    """The part of ``emb`` covering the cells of ``cx`` (e.g. a subcomplex)."""
    edge_ids = {e.id for e in cx.edges}
    return Embedding(
        emb.dim,
        {v: emb.positions[v] for v in cx.vertices if v in emb.positions},
        {k: p for k, p in emb.polylines.items() if k in edge_ids},
    )


def discrete_curvature(points, closed: bool = False) -> np.ndarray:
    """Circumscribed-circle curvature at each interior point of a polyline.

    Heuristic stand-in for the curvature of the smooth curve the polyline
    samples; collinear triples give 0.
    """
    p = np.asarray(points, dtype=float)
    if closed:
        prev, cur, nxt = np.roll(p, 1, axis=0), p, np.roll(p, -1, axis=0)
    else:
        prev, cur, nxt = p[:-2], p[1:-1], p[2:]
    a = np.linalg.norm(cur - prev, axis=1)
    b = np.linalg.norm(nxt - cur, axis=1)
    c = np.linalg.norm(nxt - prev, axis=1)
    u, w = cur - prev, nxt - prev
    # twice the triangle area, valid in any dimension via the Gram determinant
    gram = (u * u).sum(1) * (w * w).sum(1) - (u * w).sum(1) ** 2
    area2 = np.sqrt(np.clip(gram, 0.0, None))
    denom = a * b * c
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(denom > 0, 2.0 * area2 / denom, 0.0)
    return kappa


def max_discrete_curvature(cx: CwComplex, emb: Embedding) -> float:
    """Heuristic curvature bound: max circumscribed-circle curvature over all cells."""
    best = 0.0
    for e in cx.edges:
        line = edge_polyline(cx, emb, e.id)
        if e.is_loop:
            kappa = discrete_curvature(line[:-1], closed=True)
        else:
            kappa = discrete_curvature(line)
        if kappa.size:
            best = max(best, float(kappa.max()))
    return best


@dataclass(frozen=True, eq=False)
class DirectionSet:
    """Finite set of unit vectors standing in for the sphere S^{d-1}."""

    vectors: np.ndarray
    scheme: str = "custom"
    count: int = 0
    seed: int | None = None

    def __post_init__(self):
        vecs = np.array(self.vectors, dtype=float)
        if vecs.ndim == 1:
            vecs = vecs.reshape(-1, 1)
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)
        if not self.count:
            object.__setattr__(self, "count", len(vecs))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.vectors)

    def __iter__(self):
        return iter(self.vectors)

    def __getitem__(self, i):
        return self.vectors[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, DirectionSet):
            return NotImplemented
        return self.vectors.shape == other.vectors.shape and bool(np.array_equal(self.vectors, other.vectors))

    def __hash__(self):
        return hash(self.vectors.tobytes())

    def descriptor(self) -> dict:
        return {"scheme": self.scheme, "count": self.count, "seed": self.seed}


def make_directions(d: int, m: int, seed: int = 0) -> DirectionSet:
    """Deterministic direction set on S^{d-1}.

    d=1 gives {+1, -1}; d=2 gives ``m`` equally spaced angles starting at 0;
    d=3 a Fibonacci sphere; d>=4 seeded normalised Gaussian draws.
    """
    if d < 1 or m < 1:
        raise ValueError(f"need d >= 1 and m >= 1, got d={d}, m={m}")
    if d == 1:
        return DirectionSet(np.array([[1.0], [-1.0]]), "signs", 2, seed)
    if d == 2:
        theta = 2.0 * np.pi * np.arange(m) / m
        vecs = np.column_stack([np.cos(theta), np.sin(theta)])
        # exact zeros where cos/sin should vanish keep axis directions clean
        vecs[np.abs(vecs) < 1e-15] = 0.0
        return DirectionSet(vecs, "circle", m, seed)
    if d == 3:
        i = np.arange(m) + 0.5
        z = 1.0 - 2.0 * i / m
        r = np.sqrt(1.0 - z * z)
        phi = np.pi * (3.0 - math.sqrt(5.0)) * np.arange(m)
        vecs = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        return DirectionSet(vecs, "fibonacci", m, seed)
    rng = np.random.default_rng(seed)
    vecs = rng.standard_normal((m, d))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    return DirectionSet(vecs, "gaussian", m, seed)


# --- convenience constructors ------------------------------------------------


def polygon(points) -> tuple[CwComplex, Embedding]:
    """Closed polygon: one vertex per point, one straight edge per side."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    names = [f"v{i}" for i in range(n)]
    edges = [Edge(f"e{i}", names[i], names[(i + 1) % n]) for i in range(n)]
    return CwComplex(names, edges), Embedding(pts.shape[1], dict(zip(names, pts)))


def closed_curve(points) -> tuple[CwComplex, Embedding]:
    """Closed curve as a single 0-cell with one loop; ``points[0]`` is the 0-cell."""
    pts = np.asarray(points, dtype=float)
    cx = CwComplex(["p"], [Edge("loop", "p", "p")])
    return cx, Embedding(pts.shape[1], {"p": pts[0]}, {"loop": pts[1:]})


def path(points) -> tuple[CwComplex, Embedding]:
    """Open polyline with a 0-cell at every point."""
    pts = np.asarray(points, dtype=float)
    names = [f"v{i}" for i in range(len(pts))]
    edges = [Edge(f"e{i}", names[i], names[i + 1]) for i in range(len(pts) - 1)]
    return CwComplex(names, edges), Embedding(pts.shape[1], dict(zip(names, pts)))


# --- JSON ------------------------------------------------------------------


def to_json(cx: CwComplex, emb: Embedding) -> dict:
    return {
        "dim": emb.dim,
        "vertices": [{"id": v, "pos": [float(x) for x in emb.positions[v]]} for v in cx.vertices],
        "edges": [
            {"id": e.id, "u": e.u, "v": e.v, "interior": [[float(x) for x in p] for p in emb.interior(e.id)]}
            for e in cx.edges
        ],
    }


def from_json(doc: Mapping) -> tuple[CwComplex, Embedding]:
    try:
        dim = int(doc["dim"])
        verts = doc["vertices"]
        edges = doc.get("edges", [])
        cx = CwComplex([str(v["id"]) for v in verts], [Edge(str(e["id"]), str(e["u"]), str(e["v"])) for e in edges])
        positions = {str(v["id"]): [float(x) for x in v["pos"]] for v in verts}
        polylines = {
            str(e["id"]): np.array(e.get("interior", []), dtype=float).reshape(-1, dim) for e in edges
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed complex document: {exc!r}") from exc
    return cx, Embedding(dim, positions, polylines)


def load_json(path: str | Path) -> tuple[CwComplex, Embedding]:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    return from_json(doc)


def dump_json(cx: CwComplex, emb: Embedding, path: str | Path, extra: Mapping | None = None) -> None:
    doc = to_json(cx, emb)
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
