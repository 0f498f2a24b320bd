import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _fixtures import ngon, random_complex, square
from ectstab.complex import (
    CwComplex,
    Edge,
    Embedding,
    closed_curve,
    discrete_curvature,
    edge_arc_length,
    epsilon_density,
    from_json,
    make_directions,
    path,
    refine,
    require_valid,
    sample_graph,
    to_json,
    total_length,
    transform,
    validate,
)
from ectstab.errors import ValidationError


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


class TestValidate:
    def test_triangle_is_valid(self):
        cx = CwComplex(["a", "b", "c"], [("e1", "a", "b"), ("e2", "b", "c"), ("e3", "c", "a")])
        emb = Embedding(2, {"a": (0, 0), "b": (1, 0), "c": (0, 1)})
        assert validate(cx, emb).ok

    def test_loop_without_interior(self):
        cx = CwComplex(["p"], [Edge("loop", "p", "p")])
        report = validate(cx, Embedding(2, {"p": (0, 0)}))
        assert report.kinds() == {"degenerate loop"}
        assert report.violations[0].id == "loop"

    def test_dangling_endpoint(self):
        cx = CwComplex(["a"], [Edge("e", "a", "ghost")])
        report = validate(cx, Embedding(2, {"a": (0, 0)}))
        assert "dangling endpoint" in report.kinds()

    def test_zero_length_segment(self):
        cx = CwComplex(["a", "b"], [Edge("e", "a", "b")])
        emb = Embedding(2, {"a": (0, 0), "b": (1, 0)}, {"e": [[1, 0]]})
        assert validate(cx, emb).kinds() == {"zero-length segment"}

    def test_radius_names_point(self):
        cx, emb = square()
        report = validate(cx, emb, radius=1.2)
        assert report.kinds() == {"outside radius"}
        assert [v.id for v in report.violations] == ["c"]

    def test_several_violations_collected(self):
        cx = CwComplex(["a", "a", "b"], [Edge("e", "a", "b"), Edge("e", "a", "z")])
        emb = Embedding(2, {"a": (0, 0), "q": (1, 1)})
        kinds = validate(cx, emb).kinds()
        assert {"duplicate vertex", "duplicate edge", "dangling endpoint", "missing position", "unknown vertex"} <= kinds

    def test_non_finite_and_dimension(self):
        cx = CwComplex(["a", "b"], [Edge("e", "a", "b")])
        emb = Embedding(2, {"a": (0, np.nan), "b": (1, 0, 0)})
        assert {"non-finite coordinate", "dimension mismatch"} <= validate(cx, emb).kinds()

    def test_require_valid_raises(self):
        cx = CwComplex(["p"], [Edge("loop", "p", "p")])
        with pytest.raises(ValidationError, match="degenerate loop"):
            require_valid(cx, Embedding(2, {"p": (0, 0)}))


class TestGeometry:
    def test_unit_segment(self):
        cx, emb = path([(0, 0), (1, 0)])
        assert edge_arc_length(cx, emb, "e0") == 1.0

    def test_square_lengths(self):
        cx, emb = square()
        assert [edge_arc_length(cx, emb, e.id) for e in cx.edges] == [1.0] * 4
        assert total_length(cx, emb) == 4.0

    def test_64gon_length(self):
        cx, emb = ngon(64)
        assert total_length(cx, emb) == pytest.approx(64 * 2 * np.sin(np.pi / 64), rel=1e-12)
        # 128 sin(pi/64), evaluated to 30 digits
        assert total_length(cx, emb) == pytest.approx(6.28066231390950582, rel=1e-13)

    def test_epsilon_density_examples(self):
        cx = CwComplex(["a", "b"], [Edge("e", "a", "b")])
        assert epsilon_density(cx, Embedding(2, {"a": (0, 0), "b": (1, 0)}, {"e": [[0.5, 0]]})) == 0.5
        assert epsilon_density(cx, Embedding(2, {"a": (0, 0), "b": (3, 0)}, {"e": [[1, 0]]})) == 2.0
        for n in (5, 16, 100):
            assert epsilon_density(*ngon(n)) == pytest.approx(2 * np.sin(np.pi / n), rel=1e-12)

    def test_unknown_edge(self):
        cx, emb = square()
        with pytest.raises(KeyError):
            edge_arc_length(cx, emb, "nope")

    def test_sample_graph_layout(self):
        cx, emb = closed_curve([(1, 0), (0, 1), (-1, 0), (0, -1)])
        pts, segs = sample_graph(cx, emb)
        assert pts.shape == (4, 2)
        assert segs.tolist() == [[0, 1], [1, 2], [2, 3], [3, 0]]

    def test_discrete_curvature_circle(self):
        th = np.linspace(0, 2 * np.pi, 50, endpoint=False)
        pts = 2 * np.column_stack([np.cos(th), np.sin(th)])
        assert np.allclose(discrete_curvature(pts, closed=True), 0.5, rtol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6), st.floats(-np.pi, np.pi), st.floats(-5, 5), st.floats(-5, 5))
    def test_arc_length_rigid_invariance(self, seed, theta, bx, by):
        cx, emb = random_complex(np.random.default_rng(seed), 2)
        moved = transform(emb, rotation(theta), (bx, by))
        for e in cx.edges:
            before, after = edge_arc_length(cx, emb, e.id), edge_arc_length(cx, moved, e.id)
            assert after == pytest.approx(before, rel=1e-12, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 4))
    def test_refine_does_not_increase_density(self, seed, k):
        cx, emb = random_complex(np.random.default_rng(seed), 3)
        if not cx.edges:
            return
        fine = refine(cx, emb, k)
        assert epsilon_density(cx, fine) <= epsilon_density(cx, emb) * (1 + 1e-12)
        assert total_length(cx, fine) == pytest.approx(total_length(cx, emb), rel=1e-12)


class TestDirections:
    def test_circle_four(self):
        dirs = make_directions(2, 4, 3)
        assert np.array_equal(dirs.vectors, [[1, 0], [0, 1], [-1, 0], [0, -1]])

    def test_line(self):
        assert make_directions(1, 17, 0).vectors.tolist() == [[1.0], [-1.0]]

    def test_sphere_distinct(self):
        dirs = make_directions(3, 100, 7)
        assert len(dirs) == 100
        gram_ = dirs.vectors @ dirs.vectors.T
        np.fill_diagonal(gram_, -1)
        assert gram_.max() < 1 - 1e-6

    @given(st.integers(1, 6), st.integers(1, 200), st.integers(0, 2**32 - 1))
    def test_unit_norm_and_deterministic(self, d, m, seed):
        a, b = make_directions(d, m, seed), make_directions(d, m, seed)
        assert a == b
        assert np.allclose(np.linalg.norm(a.vectors, axis=1), 1.0, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("d,m", [(0, 3), (2, 0)])
    def test_rejects_empty(self, d, m):
        with pytest.raises(ValueError):
            make_directions(d, m)


class TestJson:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6))
    def test_round_trip_bit_exact(self, seed):
        cx, emb = random_complex(np.random.default_rng(seed), 3)
        text = json.dumps(to_json(cx, emb))
        cx2, emb2 = from_json(json.loads(text))
        assert cx2 == cx
        for v in cx.vertices:
            assert np.array_equal(emb2.positions[v], emb.positions[v])
        for e in cx.edges:
            assert np.array_equal(emb2.interior(e.id), emb.interior(e.id))

    def test_malformed(self):
        with pytest.raises(ValidationError):
            from_json({"dim": 2, "vertices": [{"id": "a"}]})
