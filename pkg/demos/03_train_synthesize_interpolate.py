# coding: utf-8

# # Train, synthesise, interpolate
#
# Overfit a small model on eight toy fonts, then use it the way a font
# designer would: give it four glyphs of a style and ask for the rest, and
# blend two styles.  The default 2000 steps take roughly 15 minutes on one
# core; pass a smaller number on the command line for a quick look.

# %%

import sys
import time
from pathlib import Path

import numpy as np

from vecfont.data import CLASSES, build_table, overfit_fonts
from vecfont.net import ModelConfig
from vecfont.pipeline import References, TrainConfig, default_refs, evaluate, interpolate, synthesize, train
from vecfont.raster import fill_ratio, l1_error, rasterize, write_pgm

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
out = Path(__file__).with_name("out")
out.mkdir(exist_ok=True)

fonts, specs = overfit_fonts(0, 8)
model = ModelConfig(d_model=64, n_heads=4, dec_layers=2)
table = build_table(fonts, model.n_max, model.resolution)

# Training logs every loss term per step.  We print a running mean.

# %%

t0 = time.time()


def progress(step, P, row):
    if (step + 1) % 250 == 0:
        print(f"step {step + 1:5d}  total {row['total']:8.3f}  cmd CE {row['cmd_ce_init']:.3f}  "
              f"img {row['l_img']:.3f}  ({time.time() - t0:.0f}s)")


cfg = TrainConfig(model=model, batch_size=8, steps=steps, lr=1e-3, seed=0)
P = train(cfg, table, out_dir=out / "run", log_path=out / "run" / "log.jsonl", callback=progress).params

# Re-synthesis error over the training glyphs, decoded from the mean latent.

# %%

rep = evaluate(P, model, table)
print(f"mean L1 {rep.l1:.4f}  mean junction gap {rep.gap:.5f}")

# Few-shot synthesis: four references of font 3, target "S_curve", four
# latent samples, keep the one whose raster best matches the image branch.

# %%

target = CLASSES.index("S_curve")
refs = References.from_table(table, 3, default_refs(target, table.n_char, model.n_refs))
res = synthesize(P, model, refs, target, n_samples=4, seed=0)
print("candidate IOUs", np.round(res.ious, 3), "picked", res.index)
img = rasterize(res.glyph, 64)
print("L1 vs ground truth", round(l1_error(img, table.images[3, target]), 4))
write_pgm(out / "synth_S.pgm", np.concatenate([table.images[3, target], img, res.image], axis=1))

# Interpolation between font 0 and font 7, which differ only in stroke
# width.  The fill ratio should move steadily between the two.

# %%

c = CLASSES.index("o_ring")
classes = default_refs(c, table.n_char, model.n_refs)
ra, rb = References.from_table(table, 0, classes), References.from_table(table, 7, classes)
row = []
for lam in np.linspace(0, 1, 5):
    g = interpolate(P, model, ra, rb, float(lam), [c]).glyphs[0]
    im = rasterize(g, 64)
    row.append(im)
    print(f"lambda {lam:.2f}  fill {fill_ratio(im):.4f}")
print("strokes", specs[0].stroke, specs[7].stroke)
write_pgm(out / "interp_o_ring.pgm", np.concatenate(row, axis=1))
