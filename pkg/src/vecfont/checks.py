"""Finite-difference gradient checks for every tensor op and the tiny model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import net
from .autodiff import Tensor, grad_check
from .embedding import N_BINS
from .glyph_ir import RELAXED_MASKS, CommandType
from .net import ModelConfig
from .objective import LossWeights, PerceptualNet, total
from .pipeline import Batch, TrainConfig, decoder_wh, forward_losses


@dataclass
class CheckResult:
    name: str
    error: float


def _away_from_zero(rng, shape, lo=0.2):
    """Random values with |v| >= lo, keeping kinks out of the eps window."""
    v = rng.uniform(lo, 1.5, shape)
    return v * rng.choice([-1.0, 1.0], shape)


def _proj(rng, shape):
    """Fixed random weights turning any tensor output into a scalar."""
    r = rng.normal(size=shape)
    return lambda y: ad.sum_(y * r)


def op_cases(seed: int = 0) -> list[tuple[str, Callable[[Tensor], Tensor], Tensor]]:
    """(name, f, x) for every differentiable input of every op."""
    rng = np.random.default_rng(seed)
    cases = []

    def add(name, f, x):
        cases.append((name, f, Tensor(np.asarray(x, dtype=float))))

    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 5))
    p35 = _proj(rng, (3, 5))
    add("matmul[a]", lambda x: p35(ad.matmul(x, b)), a)
    add("matmul[b]", lambda x: p35(ad.matmul(a, x)), b)
    a3 = rng.normal(size=(2, 3, 4))
    p235 = _proj(rng, (2, 3, 5))
    add("matmul[batched]", lambda x: p235(ad.matmul(a3, x)), rng.normal(size=(2, 4, 5)))
    add("linear", lambda x: p35(ad.linear(x, b, np.ones(5))), a)

    p34 = _proj(rng, (3, 4))
    c = rng.normal(size=(3, 4))
    row = rng.normal(size=(4,))
    add("add", lambda x: p34(ad.add(x, c)), a)
    add("add[broadcast]", lambda x: p34(ad.add(c, x)), row)
    add("sub", lambda x: p34(ad.sub(c, x)), a)
    add("mul", lambda x: p34(ad.mul(x, c)), a)
    add("mul[broadcast]", lambda x: p34(ad.mul(c, x)), row)
    add("div", lambda x: p34(ad.div(c, x)), _away_from_zero(rng, (3, 4), 0.5))
    add("scale", lambda x: p34(ad.scale(x, -2.5)), a)
    add("power", lambda x: p34(ad.power(x, 3.0)), a)
    add("square", lambda x: p34(ad.square(x)), a)
    add("abs", lambda x: p34(ad.abs_(x)), _away_from_zero(rng, (3, 4)))
    add("exp", lambda x: p34(ad.exp(x)), a)
    add("log", lambda x: p34(ad.log(x)), rng.uniform(0.3, 2.0, (3, 4)))
    add("sqrt", lambda x: p34(ad.sqrt(x)), rng.uniform(0.3, 2.0, (3, 4)))
    add("relu", lambda x: p34(ad.relu(x)), _away_from_zero(rng, (3, 4)))
    add("gelu", lambda x: p34(ad.gelu(x)), a)
    add("sigmoid", lambda x: p34(ad.sigmoid(x)), a)
    add("tanh", lambda x: p34(ad.tanh(x)), a)
    add("sum", lambda x: ad.sum_(ad.sum_(x, axis=0) * row), a)
    add("mean", lambda x: ad.sum_(ad.mean(x, axis=1, keepdims=True) * c), a)
    add("softmax", lambda x: p34(ad.softmax(x)), a)
    add("log_softmax", lambda x: p34(ad.log_softmax(x)), a)
    g, be = rng.normal(size=4), rng.normal(size=4)
    add("layer_norm", lambda x: p34(ad.layer_norm(x, g, be)), a)
    add("layer_norm[gamma]", lambda x: p34(ad.layer_norm(a, x, be)), g)
    add("layer_norm[beta]", lambda x: p34(ad.layer_norm(a, g, x)), be)

    p43 = _proj(rng, (4, 3))
    add("transpose", lambda x: p43(ad.transpose(x)), a)
    add("swapaxes", lambda x: p43(ad.swapaxes(x, 0, 1)), a)
    add("reshape", lambda x: _proj(np.random.default_rng(1), (2, 6))(ad.reshape(x, (2, 6))), a)
    p64 = _proj(rng, (6, 4))
    add("concat", lambda x: p64(ad.concat([x, c], axis=0)), a)
    add("stack", lambda x: _proj(np.random.default_rng(2), (2, 3, 4))(ad.stack([x, c])), a)
    add("slice", lambda x: _proj(np.random.default_rng(3), (2, 2))(ad.slice_(x, (slice(1, 3), slice(0, 4, 2)))), a)
    add("slice[fancy]", lambda x: _proj(np.random.default_rng(4), (3, 4))(ad.slice_(x, np.array([2, 0, 2]))), a)
    gi = rng.integers(0, 4, (3, 6))
    add("gather", lambda x: _proj(np.random.default_rng(5), (3, 6))(ad.gather(x, gi, axis=-1)), a)
    table = rng.normal(size=(7, 4))
    ids = rng.integers(0, 7, (2, 5))
    add("embedding_lookup", lambda x: _proj(np.random.default_rng(6), (2, 5, 4))(ad.embedding_lookup(x, ids)), table)
    mask = rng.random((3, 4)) < 0.4
    mask[:, 0] = False  # every softmax row keeps one live entry
    add("masked_fill", lambda x: p34(ad.masked_fill(x, mask, 0.0)), a)
    add("masked_fill+softmax", lambda x: p34(ad.softmax(ad.masked_fill(x, mask))), a)
    tgt = rng.integers(0, 4, 3)
    wt3 = rng.uniform(0.5, 1.5, 3)
    add("cross_entropy_with_logits", lambda x: ad.sum_(ad.cross_entropy_with_logits(x, tgt) * wt3), a)

    xi = rng.normal(size=(2, 3, 6, 6))
    w = rng.normal(size=(4, 3, 3, 3)) * 0.5
    bc = rng.normal(size=4)
    pc = _proj(rng, (2, 4, 3, 3))
    add("conv2d[x]", lambda x: pc(ad.conv2d(x, w, bc, stride=2, padding=1)), xi)
    add("conv2d[w]", lambda x: pc(ad.conv2d(xi, x, bc, stride=2, padding=1)), w)
    add("conv2d[b]", lambda x: pc(ad.conv2d(xi, w, x, stride=2, padding=1)), bc)
    xt = rng.normal(size=(2, 3, 3, 3))
    wt = rng.normal(size=(3, 2, 4, 4)) * 0.5
    bt = rng.normal(size=2)
    pt = _proj(rng, (2, 2, 6, 6))
    add("transposed_conv2d[x]", lambda x: pt(ad.transposed_conv2d(x, wt, bt, stride=2, padding=1)), xt)
    add("transposed_conv2d[w]", lambda x: pt(ad.transposed_conv2d(xt, x, bt, stride=2, padding=1)), wt)
    add("transposed_conv2d[b]", lambda x: pt(ad.transposed_conv2d(xt, wt, x, stride=2, padding=1)), bt)
    return cases


def check_ops(seed: int = 0, eps: float = 1e-5) -> list[CheckResult]:
    return [CheckResult(name, grad_check(f, x, eps)) for name, f, x in op_cases(seed)]


# -- full model --------------------------------------------------------------------

def tiny_batch(cfg: ModelConfig, seed: int = 0, batch_size: int = 2) -> Batch:
    """Random relaxed sequences in the tiny model's shapes."""
    rng = np.random.default_rng(seed)
    n, r = cfg.n_max, cfg.n_refs

    def seqs(shape):
        cmd = np.full(shape + (n,), int(CommandType.EOS))
        for idx in np.ndindex(*shape):
            length = int(rng.integers(2, n))
            cmd[idx][0] = int(CommandType.MOVE)
            cmd[idx][1:length] = rng.choice([int(CommandType.LINE), int(CommandType.CURVE)], length - 1)
        mask = RELAXED_MASKS[cmd]
        bins = np.where(mask, rng.integers(0, N_BINS, cmd.shape + (8,)), 0)
        wh = rng.integers(0, N_BINS, shape + (2,))
        return cmd, bins, mask, wh

    rc, rb, rm, rwh = seqs((batch_size, r))
    tc, tb, tm, _ = seqs((batch_size,))
    res = cfg.resolution
    return Batch(
        ref_cmd=rc, ref_bins=rb, ref_mask=rm, ref_wh=rwh,
        ref_images=(rng.random((batch_size, r, res, res)) > 0.5).astype(float),
        tgt_class=rng.integers(0, cfg.n_char, batch_size),
        tgt_cmd=tc, tgt_bins=tb, tgt_mask=tm, tgt_coords=tb / (N_BINS - 1),
        tgt_image=(rng.random((batch_size, res, res)) > 0.5).astype(float),
        dec_wh=decoder_wh(rwh),
    )


def model_loss_fn(cfg: ModelConfig, seed: int = 0, jitter: float = 0.1):
    """(params, loss(P) -> scalar Tensor) for the full objective, deterministic.

    Fresh parameters have zero biases, which parks every dead ReLU input exactly on
    the kink; ``jitter`` adds Gaussian noise so the check runs at a generic point.
    """
    tc = TrainConfig(model=cfg, weights=LossWeights())
    P = net.init_params(cfg, seed)
    noise = np.random.default_rng(seed + 3)
    for p in P.values():
        p.data = p.data + jitter * noise.normal(size=p.shape)
    batch = tiny_batch(cfg, seed)
    perceptual = PerceptualNet(channels=(2, 2, 2))

    def loss(params) -> Tensor:
        out = forward_losses(params, tc, batch, np.random.default_rng(seed + 1), perceptual)
        return total(out.terms, tc.weights).total_tensor

    return P, loss


def check_model(cfg: ModelConfig | None = None, seed: int = 0, per_tensor: int = 3,
                eps: float = 1e-5, jitter: float = 0.1) -> list[CheckResult]:
    """Grad-check ``per_tensor`` random coordinates of every parameter tensor."""
    cfg = cfg or ModelConfig.tiny()
    P, loss = model_loss_fn(cfg, seed, jitter)
    rng = np.random.default_rng(seed + 2)
    results = []
    for name, p in P.items():
        idx = rng.choice(p.size, min(per_tensor, p.size), replace=False)

        def f(x, name=name):
            return loss({**P, name: x})

        results.append(CheckResult(name, grad_check(f, p, eps, indices=idx)))
    return results
