# coding: utf-8

# # Checking gradients
#
# Every operator in the autodiff core has a hand-written backward rule.  We
# compare each one against central finite differences, then do the same for
# a few parameters of the whole tiny model.

# %%

import numpy as np

from vecfont import autodiff as ad
from vecfont.autodiff import Tensor, grad_check
from vecfont.checks import check_model, check_ops
from vecfont.net import ModelConfig

# A single check by hand: d/dx sum(tanh(x) * r) should be (1 - tanh^2) * r.

# %%

rng = np.random.default_rng(0)
r = rng.normal(size=5)
x = Tensor(rng.normal(size=5), requires_grad=True)
ad.sum_(ad.tanh(x) * r).backward()
print("analytic:", np.round(x.grad, 6))
print("closed form:", np.round((1 - np.tanh(x.data) ** 2) * r, 6))
print("grad_check rel. error:", grad_check(lambda t: ad.sum_(ad.tanh(t) * r), Tensor(x.data)))

# Now the full operator table.

# %%

for res in sorted(check_ops(0), key=lambda c: -c.error)[:10]:
    print(f"{res.name:28s} {res.error:.2e}")

# And the whole model (encoder, fusion, both decoders, refiner, all losses)
# at tiny size.  This takes about a minute.

# %%

results = check_model(ModelConfig.tiny())
worst = max(results, key=lambda c: c.error)
print(f"{len(results)} parameter tensors, worst {worst.name}: {worst.error:.2e}")
