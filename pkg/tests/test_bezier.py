import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import alignment_bruteforce, de_casteljau
from vecfont.bezier import (
    ABLATION_AUX_COUNTS,
    DEFAULT_AUX,
    BezierError,
    CubicBezier,
    alignment_distance,
    as_cubic,
    aux_params,
    evaluate,
    flatten,
    split,
)
from vecfont.glyph_ir import CommandType, DrawCommand, RepKind

R = RepKind.RELAXED
unit = st.floats(0.0, 1.0, allow_nan=False)
point = st.tuples(unit, unit)
cubic = st.tuples(point, point, point, point)


def rline(a, b):
    return DrawCommand.make(CommandType.LINE, R, start=a, end=b)


def rcurve(p):
    return DrawCommand.make(CommandType.CURVE, R, *p)


class TestAsCubic:
    def test_line_thirds(self):
        b = as_cubic(rline((0, 0), (1, 0)))
        assert np.allclose(b.array(), [(0, 0), (1 / 3, 0), (2 / 3, 0), (1, 0)], atol=1e-15)

    def test_line_thirds_diagonal(self):
        b = as_cubic(rline((0, 0), (0.3, 0.6)))
        assert np.allclose(b.p2, (0.1, 0.2)) and np.allclose(b.p3, (0.2, 0.4))

    def test_curve_verbatim(self):
        p = ((0.1, 0.2), (0.3, 0.4), (0.5, 0.6), (0.7, 0.8))
        assert as_cubic(rcurve(p)) == CubicBezier(*p)

    @pytest.mark.parametrize("cmd", [CommandType.MOVE, CommandType.EOS])
    def test_rejects_move_and_eos(self, cmd):
        c = DrawCommand.eos() if cmd == CommandType.EOS else DrawCommand.make(cmd, R, start=(0, 0), end=(1, 1))
        with pytest.raises(BezierError):
            as_cubic(c)


class TestEvaluate:
    def test_endpoints(self):
        b = CubicBezier((0.1, 0.2), (0.9, 0.1), (0.4, 0.8), (0.6, 0.7))
        assert tuple(evaluate(b, 0.0)) == b.p1
        assert tuple(evaluate(b, 1.0)) == b.p4

    def test_line_midpoint(self):
        assert np.allclose(evaluate(as_cubic(rline((0, 0), (1, 0))), 0.5), (0.5, 0.0))

    def test_arch_midpoint(self):
        assert np.allclose(evaluate(CubicBezier((0, 0), (0, 1), (1, 1), (1, 0)), 0.5), (0.5, 0.75))

    @pytest.mark.parametrize("r", [-1e-9, 1.0000001, 2.0])
    def test_domain(self, r):
        with pytest.raises(BezierError):
            evaluate(CubicBezier((0, 0), (0, 0), (0, 0), (0, 0)), r)

    @given(cubic, unit)
    @settings(max_examples=300, deadline=None)
    def test_matches_de_casteljau(self, ctrl, r):
        assert np.allclose(evaluate(CubicBezier(*ctrl), r), de_casteljau(ctrl, r), atol=1e-12, rtol=0)

    @given(cubic, unit, st.lists(st.floats(-2, 2), min_size=6, max_size=6))
    @settings(max_examples=200, deadline=None)
    def test_affine_equivariant(self, ctrl, r, a):
        A = np.array(a[:4]).reshape(2, 2)
        t = np.array(a[4:])
        moved = CubicBezier(*[tuple(A @ np.array(p) + t) for p in ctrl])
        expect = A @ evaluate(CubicBezier(*ctrl), r) + t
        assert np.allclose(evaluate(moved, r), expect, atol=1e-12)

    @given(point, point, unit)
    @settings(max_examples=300, deadline=None)
    def test_line_lift_exact(self, a, b, r):
        got = evaluate(as_cubic(rline(a, b)), r)
        want = (1 - r) * np.array(a) + r * np.array(b)
        assert np.abs(got - want).max() <= 1e-15


class TestAux:
    def test_default(self):
        assert DEFAULT_AUX == (0.25, 0.5, 0.75) == aux_params(3)

    @pytest.mark.parametrize("k", ABLATION_AUX_COUNTS)
    def test_uniform_interior(self, k):
        r = aux_params(k)
        assert len(r) == k
        assert all(0 < v < 1 for v in r)
        assert list(r) == sorted(set(r))

    def test_negative(self):
        with pytest.raises(BezierError):
            aux_params(-1)


class TestAlignment:
    def test_identical_zero(self):
        c = rcurve(((0.1, 0.2), (0.3, 0.4), (0.5, 0.6), (0.7, 0.8)))
        assert alignment_distance(c, c) == 0.0

    def test_translation(self):
        d = 0.07
        p = ((0.1, 0.2), (0.3, 0.4), (0.5, 0.6), (0.7, 0.8))
        q = tuple((x + d, y) for x, y in p)
        assert alignment_distance(rcurve(p), rcurve(q)) == pytest.approx(3 * d * d, abs=1e-15)

    def test_mixed_types(self):
        a = rline((0.0, 0.0), (0.9, 0.0))
        b = rcurve(((0.0, 0.0), (0.3, 0.0), (0.6, 0.0), (0.9, 0.0)))
        assert alignment_distance(a, b) == pytest.approx(0.0, abs=1e-30)

    def test_empty_aux(self):
        assert alignment_distance(rline((0, 0), (1, 1)), rline((1, 1), (0, 0)), ()) == 0.0

    def test_rejects_move(self):
        m = DrawCommand.make(CommandType.MOVE, R, start=(0, 0), end=(1, 1))
        with pytest.raises(BezierError):
            alignment_distance(m, rline((0, 0), (1, 1)))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=300, deadline=None)
    def test_matches_bruteforce_and_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        cmds = []
        for _ in range(2):
            pts = rng.random(8)
            if rng.random() < 0.5:
                cmds.append((CommandType.CURVE, pts, rcurve(pts.reshape(4, 2))))
            else:
                cmds.append((CommandType.LINE, pts, rline(tuple(pts[:2]), tuple(pts[6:]))))
        (ca, pa, a), (cb, pb, b) = cmds
        if ca == CommandType.LINE:
            pa = np.r_[pa[:2], 0, 0, 0, 0, pa[6:]]
        if cb == CommandType.LINE:
            pb = np.r_[pb[:2], 0, 0, 0, 0, pb[6:]]
        want = alignment_bruteforce(ca, pa, cb, pb, DEFAULT_AUX)
        assert abs(alignment_distance(a, b) - want) <= 1e-12
        assert alignment_distance(a, b) == pytest.approx(alignment_distance(b, a), abs=1e-15)
        assert alignment_distance(a, b) >= 0


class TestFlatten:
    def test_line_gives_two_points(self):
        out = flatten(as_cubic(rline((0.1, 0.1), (0.9, 0.4))).array(), 1e-3)
        assert len(out) == 2

    @given(cubic, st.floats(1e-4, 0.1))
    @settings(max_examples=200, deadline=None)
    def test_endpoints_exact(self, ctrl, tol):
        out = flatten(ctrl, tol)
        assert tuple(out[0]) == ctrl[0] and tuple(out[-1]) == ctrl[3]

    def test_vertices_on_curve(self):
        ctrl = ((0, 0), (0, 1), (1, 1), (1, 0))
        pts, params = flatten(ctrl, 1e-3, return_params=True)
        for p, t in zip(pts, params):
            assert np.hypot(*(p - np.array(de_casteljau(ctrl, t)))) < 1e-3

    def test_chords_within_tolerance(self):
        ctrl = ((0, 0), (0, 1), (1, 1), (1, 0))
        tol = 1e-3
        pts, params = flatten(ctrl, tol, return_params=True)
        for (t0, t1), (a, b) in zip(zip(params, params[1:]), zip(pts, pts[1:])):
            for s in np.linspace(t0, t1, 9):
                q = np.array(de_casteljau(ctrl, s))
                d = b - a
                u = np.clip((q - a) @ d / (d @ d), 0, 1)
                assert np.hypot(*(a + u * d - q)) < tol

    def test_arc_length_converges(self):
        ctrl = ((0.1, 0.9), (0.2, 0.0), (0.9, 0.1), (0.8, 0.8))
        dense = np.array([de_casteljau(ctrl, t) for t in np.linspace(0, 1, 20001)])
        true_len = np.hypot(*np.diff(dense, axis=0).T).sum()
        errs = []
        for tol in (1e-1, 1e-2, 1e-3, 1e-4):
            p = flatten(ctrl, tol)
            errs.append(true_len - np.hypot(*np.diff(p, axis=0).T).sum())
        assert all(e >= -1e-9 for e in errs)
        assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 1e-4

    def test_bad_tol(self):
        with pytest.raises(BezierError):
            flatten(((0, 0), (0, 0), (1, 1), (1, 1)), 0.0)

    def test_split_halves_meet(self):
        b = np.array([(0, 0), (0, 1), (1, 1), (1, 0)], dtype=float)
        left, right = split(b, 0.3)
        assert np.allclose(left[3], de_casteljau(b, 0.3))
        assert np.array_equal(left[3], right[0])
        assert math.isclose(left[0][0], 0) and math.isclose(right[3][0], 1)
