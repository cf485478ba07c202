"""Independent reference implementations the library is checked against.

Nothing here imports the code under test except plain data types.
"""

from __future__ import annotations

import math

import numpy as np

from vecfont.glyph_ir import CommandType, DrawCommand, Glyph, RepKind


# -- Bezier -------------------------------------------------------------------------

def de_casteljau(ctrl, r: float) -> tuple[float, float]:
    """Repeated linear interpolation in pure Python."""
    pts = [(float(x), float(y)) for x, y in ctrl]
    while len(pts) > 1:
        pts = [((1 - r) * a[0] + r * b[0], (1 - r) * a[1] + r * b[1]) for a, b in zip(pts, pts[1:])]
    return pts[0]


def bernstein_point(ctrl, r: float) -> tuple[float, float]:
    """sum_k C(3,k) r^k (1-r)^(3-k) p_k, term by term."""
    x = y = 0.0
    for k, (px, py) in enumerate(ctrl):
        w = math.comb(3, k) * r**k * (1 - r) ** (3 - k)
        x += w * px
        y += w * py
    return x, y


def cubic_of(cmd: CommandType, pts) -> list[tuple[float, float]]:
    """Relaxed argument vector -> 4 control points (lines spaced in thirds)."""
    p = [(pts[0], pts[1]), (pts[2], pts[3]), (pts[4], pts[5]), (pts[6], pts[7])]
    if cmd == CommandType.CURVE:
        return p
    a, b = p[0], p[3]
    return [a, (a[0] + (b[0] - a[0]) / 3, a[1] + (b[1] - a[1]) / 3),
            (a[0] + 2 * (b[0] - a[0]) / 3, a[1] + 2 * (b[1] - a[1]) / 3), b]


def alignment_bruteforce(pred_cmd, pred_pts, gt_cmd, gt_pts, aux) -> float:
    total = 0.0
    for r in aux:
        px, py = bernstein_point(cubic_of(pred_cmd, pred_pts), r)
        gx, gy = bernstein_point(cubic_of(gt_cmd, gt_pts), r)
        total += (px - gx) ** 2 + (py - gy) ** 2
    return total


# -- rasterization --------------------------------------------------------------------

def winding_numbers(polys, xs, ys) -> np.ndarray:
    """Winding number of every (x, y) sample around closed polylines
    (crossing-direction count with an is-left test)."""
    X, Y = np.meshgrid(xs, ys)
    wn = np.zeros(X.shape, dtype=int)
    for poly in polys:
        p = np.asarray(poly, dtype=float)
        q = np.roll(p, -1, axis=0)
        for (x0, y0), (x1, y1) in zip(p, q):
            is_left = (x1 - x0) * (Y - y0) - (X - x0) * (y1 - y0)
            up = (y0 <= Y) & (y1 > Y) & (is_left > 0)
            down = (y0 > Y) & (y1 <= Y) & (is_left < 0)
            wn += up.astype(int) - down.astype(int)
    return wn


def raster_oracle(polys, n: int) -> np.ndarray:
    c = (np.arange(n) + 0.5) / n
    return (winding_numbers(polys, c, c) != 0).astype(float)


# -- losses -------------------------------------------------------------------------

def ce_scalar(logits, target: int) -> float:
    m = max(logits)
    return m + math.log(sum(math.exp(v - m) for v in logits)) - logits[target]


def kl_scalar(mu, logvar) -> float:
    return sum(0.5 * (math.exp(lv) + m * m - 1.0 - lv) for m, lv in zip(mu, logvar))


# -- glyphs -------------------------------------------------------------------------

def merge_bruteforce(g: Glyph) -> list[tuple[int, tuple]]:
    """(cmd, compact points) after averaging every junction, written out
    explicitly from the relaxed slots."""
    d = list(g.drawing)
    out = []
    for j, c in enumerate(d):
        end = c.end
        nxt = d[j + 1] if j + 1 < len(d) else None
        if nxt is not None and nxt.cmd in (CommandType.LINE, CommandType.CURVE):
            end = ((c.end[0] + nxt.start[0]) / 2, (c.end[1] + nxt.start[1]) / 2)
        if c.cmd == CommandType.CURVE:
            out.append((int(c.cmd), (c.c1, c.c2, end)))
        else:
            out.append((int(c.cmd), (end,)))
    return out


def random_compact_glyph(rng: np.random.Generator, n_paths=None, max_len: int = 6, style_id: str = "") -> Glyph:
    """Multi-subpath compact glyph with arbitrary Line/Curve mixtures."""
    n_paths = int(rng.integers(1, 4)) if n_paths is None else n_paths
    paths = []

    def pt():
        return tuple(float(v) for v in rng.random(2))

    for _ in range(n_paths):
        path = [DrawCommand.make(CommandType.MOVE, RepKind.COMPACT, end=pt())]
        for _ in range(int(rng.integers(1, max_len + 1))):
            if rng.random() < 0.5:
                path.append(DrawCommand.make(CommandType.LINE, RepKind.COMPACT, end=pt()))
            else:
                path.append(DrawCommand.make(CommandType.CURVE, RepKind.COMPACT, c1=pt(), c2=pt(), end=pt()))
        paths.append(path)
    # subpaths in canonical top-left-first order, as the parser emits them
    paths.sort(key=lambda p: (p[0].end[1], p[0].end[0]))
    cmds = tuple(c for p in paths for c in p)
    return Glyph(cmds, int(rng.integers(0, 8)), RepKind.COMPACT, style_id)


def random_relaxed_glyph(rng: np.random.Generator, max_len: int = 8) -> Glyph:
    """Relaxed glyph with independent start points, so junctions have gaps."""
    cmds = []

    def pt():
        return tuple(float(v) for v in rng.random(2))

    first = pt()
    cmds.append(DrawCommand.make(CommandType.MOVE, RepKind.RELAXED, start=first, end=first))
    for _ in range(int(rng.integers(1, max_len + 1))):
        u = rng.random()
        if u < 0.15:
            cmds.append(DrawCommand.make(CommandType.MOVE, RepKind.RELAXED, start=pt(), end=pt()))
        elif u < 0.55:
            cmds.append(DrawCommand.make(CommandType.LINE, RepKind.RELAXED, start=pt(), end=pt()))
        else:
            cmds.append(DrawCommand.make(CommandType.CURVE, RepKind.RELAXED, pt(), pt(), pt(), pt()))
    return Glyph(tuple(cmds), 0, RepKind.RELAXED)


def star_polygon_glyph(rng: np.random.Generator, n_contours: int = 3) -> Glyph:
    """Closed star-shaped contours (some with curved edges) of random
    orientation; used for rasterizer agreement."""
    cmds = []
    for _ in range(n_contours):
        cx, cy = rng.uniform(0.25, 0.75, 2)
        k = int(rng.integers(3, 9))
        ang = np.sort(rng.uniform(0, 2 * np.pi, k))
        rad = rng.uniform(0.05, 0.24, k)
        if rng.random() < 0.5:
            ang = ang[::-1]
        pts = [(float(np.clip(cx + r * np.cos(a), 0, 1)), float(np.clip(cy + r * np.sin(a), 0, 1)))
               for a, r in zip(ang, rad)]
        cmds.append(DrawCommand.make(CommandType.MOVE, RepKind.COMPACT, end=pts[0]))
        ring = pts[1:] + pts[:1]
        prev = pts[0]
        for p in ring:
            if rng.random() < 0.4:
                c1 = tuple(float(np.clip(v, 0, 1)) for v in np.array(prev) + rng.normal(0, 0.04, 2))
                c2 = tuple(float(np.clip(v, 0, 1)) for v in np.array(p) + rng.normal(0, 0.04, 2))
                cmds.append(DrawCommand.make(CommandType.CURVE, RepKind.COMPACT, c1=c1, c2=c2, end=p))
            else:
                cmds.append(DrawCommand.make(CommandType.LINE, RepKind.COMPACT, end=p))
            prev = p
    return Glyph(tuple(cmds), 0, RepKind.COMPACT)


# -- topology -----------------------------------------------------------------------

def _components(mask: np.ndarray, diagonal: bool) -> list[set]:
    steps = [(0, 1), (1, 0), (0, -1), (-1, 0)]
    if diagonal:
        steps += [(1, 1), (1, -1), (-1, 1), (-1, -1)]
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for start in zip(*np.nonzero(mask)):
        if seen[start]:
            continue
        seen[start] = True
        stack, comp = [start], set()
        while stack:
            y, x = stack.pop()
            comp.add((y, x))
            for dy, dx in steps:
                q = (y + dy, x + dx)
                if 0 <= q[0] < mask.shape[0] and 0 <= q[1] < mask.shape[1] and mask[q] and not seen[q]:
                    seen[q] = True
                    stack.append(q)
        comps.append(comp)
    return comps


def boundary_contours(img: np.ndarray, threshold: float = 0.5) -> int:
    """Outer boundaries (8-connected ink) plus holes (4-connected background off the border)."""
    ink = np.asarray(img) >= threshold
    n = ink.shape[0]
    holes = [c for c in _components(~ink, diagonal=False)
             if not any(y in (0, n - 1) or x in (0, ink.shape[1] - 1) for y, x in c)]
    return len(_components(ink, diagonal=True)) + len(holes)
