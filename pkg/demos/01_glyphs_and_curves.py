# coding: utf-8

# # Glyphs, relaxed commands and curves
#
# A glyph is a list of drawing commands on the unit canvas.  Here we parse
# one from SVG path text, look at its two storage forms, sample a curve the
# way the alignment loss does, and render it.

# %%

from pathlib import Path

import numpy as np

from vecfont.bezier import DEFAULT_AUX, as_cubic, evaluate
from vecfont.data import CLASSES, ToyFontSpec, make_font
from vecfont.glyph_ir import junction_gaps, merge_relaxed, parse_svg_path, serialize_svg, to_relaxed
from vecfont.raster import fill_ratio, rasterize, write_pgm

out = Path(__file__).with_name("out")
out.mkdir(exist_ok=True)

# A square with a rounded bottom edge, written as SVG path data.

# %%

g = parse_svg_path("M 0.2 0.2 L 0.8 0.2 L 0.8 0.6 C 0.8 0.9 0.2 0.9 0.2 0.6 Z")
for c in g.drawing:
    print(c.cmd.label, c.pts)

# In compact form a command only stores its end (and controls).  The
# relaxed form copies the previous end into an explicit start, which is what
# the model predicts.  Merging averages each start with the previous end, so
# a relaxed glyph taken from ground truth comes back unchanged.

# %%

r = to_relaxed(g)
print("junction gaps:", junction_gaps(r))
print("round trip exact:", merge_relaxed(r) == g)
print(serialize_svg(merge_relaxed(r)))

# The curve, lifted to a cubic, sampled at the three auxiliary parameters.

# %%

curve = as_cubic(r.drawing[3])
for t in DEFAULT_AUX:
    print(f"r={t:.2f}", np.round(evaluate(curve, t), 4))

# Rasterise at 64x64 and write a PGM next to this script.

# %%

img = rasterize(g, 64)
print("fill ratio:", round(fill_ratio(img), 4))
write_pgm(out / "rounded_square.pgm", img)

# The toy alphabet.  Each class is built from the same style parameters;
# doubling the stroke thickens every glyph.

# %%

thin = make_font(ToyFontSpec(stroke=0.08), "thin")
thick = make_font(ToyFontSpec(stroke=0.15), "thick")
for name, a, b in zip(CLASSES, thin.glyphs, thick.glyphs):
    print(f"{name:9s} {a.n_commands:2d} commands  fill {fill_ratio(rasterize(a)):.3f} -> {fill_ratio(rasterize(b)):.3f}")
sheet = np.concatenate([rasterize(x, 64) for x in thick.glyphs], axis=1)
write_pgm(out / "alphabet.pgm", sheet)
