"""Parametric toy fonts: eight outline classes drawn in a sampled style.

Style parameters and their sampling ranges:

=============  ==============  ==========================================
parameter      range           effect
=============  ==============  ==========================================
stroke         [0.08, 0.15]    stem / ring thickness (canvas units)
slant          [-0.2, 0.2]     horizontal shear, radians
roundness      [0.0, 1.0]      handle length of the curved classes
aspect         [0.6, 1.0]      glyph-box width / height
=============  ==============  ==========================================
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .embedding import GlyphArrays, quantize_glyph
from .glyph_ir import CommandType, DrawCommand, Font, Glyph, RepKind, to_relaxed, write_jsonl
from .raster import rasterize, write_pgm

CLASSES = ("box", "o_ring", "L", "T", "S_curve", "triangle", "U", "H")
N_CHAR = len(CLASSES)
N_MAX = 24

_TOP, _BOTTOM = 0.15, 0.85
_LO, _HI = 0.02, 0.98


@dataclass(frozen=True)
class ToyFontSpec:
    stroke: float = 0.11
    slant: float = 0.0
    roundness: float = 0.5
    aspect: float = 0.8

    @classmethod
    def sample(cls, rng: np.random.Generator) -> ToyFontSpec:
        return cls(
            stroke=float(rng.uniform(0.08, 0.15)),
            slant=float(rng.uniform(-0.2, 0.2)),
            roundness=float(rng.uniform(0.0, 1.0)),
            aspect=float(rng.uniform(0.6, 1.0)),
        )

    def with_stroke(self, stroke: float) -> ToyFontSpec:
        return replace(self, stroke=stroke)


class _Pen:
    """Collects compact subpaths in local box coordinates, then shears."""

    def __init__(self, spec: ToyFontSpec):
        self.spec = spec
        self.paths: list[list[tuple]] = []
        self.yc = 0.5 * (_TOP + _BOTTOM)

    def _xf(self, p):
        x, y = p
        x = x + math.tan(self.spec.slant) * (self.yc - y)
        return (min(max(x, _LO), _HI), min(max(y, _LO), _HI))

    def move(self, p):
        self.paths.append([("M", p)])

    def line(self, p):
        self.paths[-1].append(("L", p))

    def curve(self, c1, c2, p):
        self.paths[-1].append(("C", c1, c2, p))

    def close(self):
        path = self.paths[-1]
        if path[-1][-1] != path[0][1]:
            self.line(path[0][1])

    def polygon(self, pts):
        self.move(pts[0])
        for p in pts[1:]:
            self.line(p)
        self.close()

    def glyph(self, char_class: int, style_id: str) -> Glyph:
        paths = []
        for path in self.paths:
            cmds = []
            for item in path:
                op, pts = item[0], [self._xf(p) for p in item[1:]]
                if op == "M":
                    cmds.append(DrawCommand.make(CommandType.MOVE, RepKind.COMPACT, end=pts[0]))
                elif op == "L":
                    cmds.append(DrawCommand.make(CommandType.LINE, RepKind.COMPACT, end=pts[0]))
                else:
                    cmds.append(DrawCommand.make(CommandType.CURVE, RepKind.COMPACT, c1=pts[0], c2=pts[1], end=pts[2]))
            paths.append(cmds)
        paths.sort(key=lambda p: (p[0].end[1], p[0].end[0]))
        return Glyph(tuple(c for p in paths for c in p), char_class, RepKind.COMPACT, style_id)


def _ellipse(pen: _Pen, cx, cy, rx, ry, k, reverse=False):
    """Four-cubic ellipse starting at the top; clockwise on screen unless reversed."""
    top, right, bottom, left = (cx, cy - ry), (cx + rx, cy), (cx, cy + ry), (cx - rx, cy)
    pen.move(top)
    if not reverse:
        pen.curve((cx + k * rx, cy - ry), (cx + rx, cy - k * ry), right)
        pen.curve((cx + rx, cy + k * ry), (cx + k * rx, cy + ry), bottom)
        pen.curve((cx - k * rx, cy + ry), (cx - rx, cy + k * ry), left)
        pen.curve((cx - rx, cy - k * ry), (cx - k * rx, cy - ry), top)
    else:
        pen.curve((cx - k * rx, cy - ry), (cx - rx, cy - k * ry), left)
        pen.curve((cx - rx, cy + k * ry), (cx - k * rx, cy + ry), bottom)
        pen.curve((cx + k * rx, cy + ry), (cx + rx, cy + k * ry), right)
        pen.curve((cx + rx, cy - k * ry), (cx + k * rx, cy - ry), top)


def _quarter(a, ta, b, tb, k):
    """Cubic for a quarter ellipse from ``a`` (heading ``ta``) to ``b`` (heading ``tb``)."""
    a, ta, b, tb = (np.asarray(v, dtype=float) for v in (a, ta, b, tb))
    c1 = a + k * float(ta @ (b - a)) * ta
    c2 = b - k * float(tb @ (b - a)) * tb
    return tuple(a), tuple(c1), tuple(c2), tuple(b)


def _offset_cubic(seg, dist):
    """Approximate offset: shift each end pair along that end's normal."""
    p = [np.asarray(q, dtype=float) for q in seg]

    def normal(a, b):
        t = b - a
        return np.array([-t[1], t[0]]) / np.hypot(*t)

    n0, n3 = normal(p[0], p[1]), normal(p[2], p[3])
    out = (p[0] + dist * n0, p[1] + dist * n0, p[2] + dist * n3, p[3] + dist * n3)
    return tuple((float(q[0]), float(q[1])) for q in out)


def make_glyph(spec: ToyFontSpec, char_class: int, style_id: str = "") -> Glyph:
    pen = _Pen(spec)
    h = _BOTTOM - _TOP
    w = spec.aspect * h
    x0, x1 = 0.5 - w / 2, 0.5 + w / 2
    y0, y1 = _TOP, _BOTTOM
    xc, yc = 0.5, 0.5 * (y0 + y1)
    s = spec.stroke
    kappa = 0.35 + 0.35 * spec.roundness
    name = CLASSES[char_class]

    if name == "box":
        pen.polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
        pen.polygon([(x0 + s, y0 + s), (x0 + s, y1 - s), (x1 - s, y1 - s), (x1 - s, y0 + s)])
    elif name == "o_ring":
        _ellipse(pen, xc, yc, w / 2, h / 2, kappa)
        _ellipse(pen, xc, yc, w / 2 - s, h / 2 - s, kappa, reverse=True)
    elif name == "L":
        pen.polygon([(x0, y0), (x0 + s, y0), (x0 + s, y1 - s), (x1, y1 - s), (x1, y1), (x0, y1)])
    elif name == "T":
        a, b = xc - s / 2, xc + s / 2
        pen.polygon([(x0, y0), (x1, y0), (x1, y0 + s), (b, y0 + s), (b, y1), (a, y1), (a, y0 + s), (x0, y0 + s)])
    elif name == "S_curve":
        # spine of four quarter arcs (two bowls), stroked by offsetting each
        # arc's control points along its end normals
        hs = s / 2
        ty, by = y0 + hs, y1 - hs
        xl, xr = x0 + hs, x1 - hs
        q1, q3 = 0.5 * (ty + yc), 0.5 * (yc + by)
        knots = [((xc, ty), (-1, 0)), ((xl, q1), (0, 1)), ((xc, yc), (1, 0)),
                 ((xr, q3), (0, 1)), ((xc, by), (-1, 0))]
        spine = [_quarter(a, ta, b, tb, kappa) for (a, ta), (b, tb) in zip(knots, knots[1:])]
        left = [_offset_cubic(seg, hs) for seg in spine]
        right = [_offset_cubic(seg, -hs) for seg in reversed(spine)]
        pen.move(left[0][0])
        for seg in left:
            pen.curve(*seg[1:])
        pen.line(right[0][3])
        for seg in right:
            pen.curve(seg[2], seg[1], seg[0])
        pen.close()
    elif name == "triangle":
        outer = [(xc, y0), (x1, y1), (x0, y1)]
        side = math.hypot(w / 2, h)
        inradius = w * h / (2 * side + w)
        f = max(0.3, (inradius - 0.8 * s) / inradius)
        gx, gy = xc, (y0 + 2 * y1) / 3
        inner = [(gx + f * (px - gx), gy + f * (py - gy)) for px, py in outer]
        pen.polygon(outer)
        pen.polygon([inner[0], inner[2], inner[1]])
    elif name == "U":
        yb = y1 - w / 2
        rk = kappa * w / 2
        ri = w / 2 - s
        pen.move((x0, y0))
        pen.line((x0, yb))
        pen.curve((x0, yb + kappa * w / 2), (xc - rk, y1), (xc, y1))
        pen.curve((xc + rk, y1), (x1, yb + kappa * w / 2), (x1, yb))
        pen.line((x1, y0))
        pen.line((x1 - s, y0))
        pen.line((x1 - s, yb))
        pen.curve((x1 - s, yb + kappa * ri), (xc + kappa * ri, yb + ri), (xc, yb + ri))
        pen.curve((xc - kappa * ri, yb + ri), (x0 + s, yb + kappa * ri), (x0 + s, yb))
        pen.line((x0 + s, y0))
        pen.close()
    elif name == "H":
        ym = yc
        pen.polygon([
            (x0, y0), (x0 + s, y0), (x0 + s, ym - s / 2), (x1 - s, ym - s / 2), (x1 - s, y0), (x1, y0),
            (x1, y1), (x1 - s, y1), (x1 - s, ym + s / 2), (x0 + s, ym + s / 2), (x0 + s, y1), (x0, y1),
        ])
    else:  # pragma: no cover
        raise ValueError(f"unknown class {char_class}")
    return pen.glyph(char_class, style_id)


def make_font(spec: ToyFontSpec, style_id: str) -> Font:
    return Font(tuple(make_glyph(spec, c, style_id) for c in range(N_CHAR)), style_id, N_CHAR)


def gen_dataset(seed: int, n_fonts: int) -> tuple[list[Font], list[Font]]:
    """Deterministic fonts split 90/10 by font (at least one test font)."""
    if n_fonts < 2:
        raise ValueError("need at least two fonts")
    fonts, _ = gen_fonts(seed, n_fonts)
    n_test = max(1, int(round(0.1 * n_fonts)))
    return fonts[: n_fonts - n_test], fonts[n_fonts - n_test:]


def gen_fonts(seed: int, n_fonts: int) -> tuple[list[Font], list[ToyFontSpec]]:
    rng = np.random.default_rng(seed)
    specs = [ToyFontSpec.sample(rng) for _ in range(n_fonts)]
    return [make_font(sp, f"font{seed:04d}_{i:03d}") for i, sp in enumerate(specs)], specs


def overfit_fonts(seed: int = 0, n_fonts: int = 8) -> tuple[list[Font], list[ToyFontSpec]]:
    """Seeded fonts whose last member is the first with only its stroke width changed.

    The pair gives two styles that differ in a single known direction, which
    is what the interpolation fill-ratio probe needs.
    """
    if n_fonts < 2:
        raise ValueError("need at least two fonts")
    _, specs = gen_fonts(seed, n_fonts - 1)
    first = specs[0]
    specs.append(first.with_stroke(0.08 if first.stroke > 0.115 else 0.15))
    return [make_font(sp, f"fit{seed:04d}_{i:03d}") for i, sp in enumerate(specs)], specs


# -- dense training arrays ---------------------------------------------------------------

@dataclass
class GlyphTable:
    """Fonts quantized into (F, C, ...) arrays plus rendered images."""

    fonts: list[Font]
    cmd: np.ndarray      # (F, C, N)
    bins: np.ndarray     # (F, C, N, 8)
    mask: np.ndarray     # (F, C, N, 8)
    coords: np.ndarray   # (F, C, N, 8)
    wh: np.ndarray       # (F, C, 2)
    images: np.ndarray   # (F, C, R, R)

    @property
    def n_fonts(self) -> int:
        return len(self.fonts)

    @property
    def n_char(self) -> int:
        return self.cmd.shape[1]


def build_table(fonts: list[Font], n_max: int = N_MAX, resolution: int = 64) -> GlyphTable:
    f, c = len(fonts), len(fonts[0])
    cmd = np.zeros((f, c, n_max), dtype=np.int64)
    bins = np.zeros((f, c, n_max, 8), dtype=np.int64)
    mask = np.zeros((f, c, n_max, 8), dtype=bool)
    coords = np.zeros((f, c, n_max, 8))
    wh = np.zeros((f, c, 2), dtype=np.int64)
    images = np.zeros((f, c, resolution, resolution))
    for i, font in enumerate(fonts):
        for j, g in enumerate(font.glyphs):
            a: GlyphArrays = quantize_glyph(to_relaxed(g), n_max)
            cmd[i, j], bins[i, j], mask[i, j], coords[i, j] = a.cmd, a.bins, a.mask, a.coords
            wh[i, j] = (a.w_bin, a.h_bin)
            images[i, j] = rasterize(g, resolution)
    return GlyphTable(fonts, cmd, bins, mask, coords, wh, images)


def write_dataset(root, train: list[Font], test: list[Font], resolution: int = 64) -> None:
    """``root/{split}.jsonl`` (compact glyphs) and ``root/images/{split}/{style}_{class}.pgm``."""
    root = Path(root)
    for split, fonts in (("train", train), ("test", test)):
        (root / "images" / split).mkdir(parents=True, exist_ok=True)
        write_jsonl(root / f"{split}.jsonl", [g for f in fonts for g in f.glyphs])
        for f in fonts:
            for g in f.glyphs:
                write_pgm(root / "images" / split / f"{g.style_id}_{g.char_class}.pgm", rasterize(g, resolution))


def spec_dict(spec: ToyFontSpec) -> dict:
    return asdict(spec)
