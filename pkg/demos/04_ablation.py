# coding: utf-8

# # Auxiliary points and refinement, switched off
#
# The same model trained three ways on toy fonts and scored on held-out
# fonts: the full objective, no auxiliary curve points, and no refinement
# decoder.  The acceptance suite runs this at 2500 steps and three seeds
# (well over an hour); the defaults here are a shorter single-seed run, so
# expect noisier numbers.

# %%

import json
import sys

from vecfont.data import build_table, gen_dataset
from vecfont.net import ModelConfig
from vecfont.pipeline import Arm, TrainConfig, ablate

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 800
seeds = [int(s) for s in sys.argv[2].split(",")] if len(sys.argv) > 2 else [0]

model = ModelConfig(d_model=32, n_heads=4, dec_layers=2)
train_fonts, test_fonts = gen_dataset(0, 40)
tr = build_table(train_fonts, model.n_max, model.resolution)
te = build_table(test_fonts, model.n_max, model.resolution)
arms = [Arm("full", 3, True), Arm("no_aux", 0, True), Arm("no_refine", 3, False)]

res = ablate(TrainConfig(model=model, batch_size=8, steps=steps, lr=1e-3), tr, te, arms, seeds)

# %%

print(f"{'arm':10s} {'test L1':>8s} {'CE init':>8s} {'CE refine':>9s}")
for a in res["arms"]:
    ce_i = sum(a["ce_init"]) / len(a["ce_init"])
    ce_r = sum(a["ce_refine"]) / len(a["ce_refine"])
    print(f"{a['name']:10s} {a['mean_error']:8.4f} {ce_i:8.3f} {ce_r:9.3f}")
print(json.dumps(res, indent=1))
