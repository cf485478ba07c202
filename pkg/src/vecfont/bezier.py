"""Cubic Bézier evaluation, auxiliary-point alignment distance, and flattening."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .glyph_ir import CommandType, DrawCommand

DEFAULT_AUX = (0.25, 0.5, 0.75)
ABLATION_AUX_COUNTS = (0, 1, 3, 6, 9, 12)


class BezierError(ValueError):
    pass


class CubicBezier(NamedTuple):
    p1: tuple[float, float]
    p2: tuple[float, float]
    p3: tuple[float, float]
    p4: tuple[float, float]

    def array(self) -> np.ndarray:
        return np.array(self, dtype=float)


def aux_params(count: int) -> tuple[float, ...]:
    """``count`` interior parameters ``i / (count + 1)``; 3 gives (0.25, 0.5, 0.75)."""
    if count < 0:
        raise BezierError("aux point count must be non-negative")
    return tuple(i / (count + 1) for i in range(1, count + 1))


def as_cubic(c: DrawCommand) -> CubicBezier:
    """Lift a relaxed Line or Curve to four control points.

    A line a->b becomes (a, a + (b-a)/3, a + 2(b-a)/3, b).
    """
    if c.cmd not in (CommandType.LINE, CommandType.CURVE):
        raise BezierError(f"{c.cmd.label} has no curve geometry")
    if not c.mask[0]:
        raise BezierError("as_cubic needs a relaxed command with an explicit start point")
    a, b = np.array(c.start), np.array(c.end)
    if c.cmd == CommandType.CURVE:
        return CubicBezier(c.start, c.c1, c.c2, c.end)
    d = b - a
    return CubicBezier(c.start, tuple(a + d / 3), tuple(a + 2 * d / 3), c.end)


def bernstein(r) -> np.ndarray:
    """Cubic Bernstein weights, shape (len(r), 4)."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    s = 1.0 - r
    return np.stack([s**3, 3 * r * s**2, 3 * r**2 * s, r**3], axis=-1)


def evaluate(b: CubicBezier, r: float) -> np.ndarray:
    if not 0.0 <= r <= 1.0:
        raise BezierError(f"parameter r={r} outside [0, 1]")
    return bernstein(r)[0] @ np.asarray(b, dtype=float)


def alignment_distance(pred: DrawCommand, gt: DrawCommand, aux=DEFAULT_AUX) -> float:
    """Sum over ``aux`` of squared distances between the two lifted curves."""
    if len(aux) == 0:
        return 0.0
    w = bernstein(aux)
    diff = w @ (as_cubic(pred).array() - as_cubic(gt).array())
    return float((diff * diff).sum())


def split(b: np.ndarray, t: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """de Casteljau subdivision of a (4, 2) control array."""
    p01 = b[0] + t * (b[1] - b[0])
    p12 = b[1] + t * (b[2] - b[1])
    p23 = b[2] + t * (b[3] - b[2])
    p012 = p01 + t * (p12 - p01)
    p123 = p12 + t * (p23 - p12)
    mid = p012 + t * (p123 - p012)
    return np.array([b[0], p01, p012, mid]), np.array([mid, p123, p23, b[3]])


def _flatness(b: np.ndarray) -> float:
    chord = b[3] - b[0]
    n = np.hypot(*chord)
    if n == 0.0:
        return float(max(np.hypot(*(b[1] - b[0])), np.hypot(*(b[2] - b[0]))))
    cross = np.abs(chord[0] * (b[1:3, 1] - b[0, 1]) - chord[1] * (b[1:3, 0] - b[0, 0]))
    return float(cross.max() / n)


def flatten(b, tol: float = 1e-3, return_params: bool = False, max_depth: int = 24):
    """Polyline through points on the curve, subdividing until the control
    polygon lies within ``tol`` of each chord.  Endpoints are exact."""
    if tol <= 0:
        raise BezierError("tol must be positive")
    ctrl = np.asarray(b, dtype=float)
    pts = [ctrl[0]]
    params = [0.0]
    stack = [(ctrl, 0.0, 1.0, 0)]
    while stack:
        seg, t0, t1, depth = stack.pop()
        if depth >= max_depth or _flatness(seg) < tol:
            pts.append(seg[3])
            params.append(t1)
            continue
        left, right = split(seg)
        tm = 0.5 * (t0 + t1)
        stack.append((right, tm, t1, depth + 1))
        stack.append((left, t0, tm, depth + 1))
    out = np.array(pts)
    out[-1] = ctrl[3]
    if return_params:
        return out, np.array(params)
    return out

