"""Loss terms and the weighted training objective."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bezier import DEFAULT_AUX, bernstein
from .embedding import N_BINS
from .glyph_ir import CommandType

TERMS = ("l_img", "l_ce_init", "l_ce_refine", "l_cons", "l_bezier", "l_kl")

_LINE, _CURVE, _EOS = int(CommandType.LINE), int(CommandType.CURVE), int(CommandType.EOS)
_BIN_VALUES = (np.arange(N_BINS) / (N_BINS - 1)).reshape(N_BINS, 1)

# (8, 8) maps from relaxed argument vectors to cubic control points
_CURVE_LIFT = np.eye(8)
_LINE_LIFT = np.zeros((8, 8))
for _k, (_ws, _we) in enumerate(((1, 0), (2 / 3, 1 / 3), (1 / 3, 2 / 3), (0, 1))):
    for _axis in range(2):
        _LINE_LIFT[_axis, 2 * _k + _axis] = _ws
        _LINE_LIFT[6 + _axis, 2 * _k + _axis] = _we


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LossWeights:
    w_img: float = 1.0
    w_ce_init: float = 1.0
    w_ce_refine: float = 1.0
    w_cons: float = 10.0
    w_bezier: float = 1.0
    w_kl: float = 0.01
    w_cmd: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")

    def vector(self) -> tuple[float, ...]:
        return (self.w_img, self.w_ce_init, self.w_ce_refine, self.w_cons, self.w_bezier, self.w_kl)


@dataclass
class LossReport:
    terms: dict[str, float]
    total: float
    total_tensor: Tensor | None = None

    def as_row(self) -> dict[str, float]:
        return {**self.terms, "total": self.total}


def total(terms: dict, weights: LossWeights = LossWeights()) -> LossReport:
    """Weighted sum over the six terms; the report keeps unweighted values."""
    values = {}
    acc = None
    for name, w in zip(TERMS, weights.vector()):
        t = terms.get(name, 0.0)
        v = float(t.data) if isinstance(t, Tensor) else float(t)
        if not math.isfinite(v):
            raise NumericError(f"loss term {name} is not finite ({v})")
        values[name] = v
        if isinstance(t, Tensor):
            part = t * w
            acc = part if acc is None else acc + part
    tot = sum(w * values[n] for n, w in zip(TERMS, weights.vector()))
    return LossReport(values, tot, acc)


# -- image ------------------------------------------------------------------------------

class PerceptualNet:
    """Frozen random-weight conv stack used as the perceptual feature map."""

    def __init__(self, seed: int = 1234, channels=(8, 16, 32)):
        rng = np.random.default_rng(seed)
        self.weights = []
        c_in = 1
        for c in channels:
            std = math.sqrt(2.0 / (c_in * 9))
            self.weights.append((Tensor(rng.normal(0, std, (c, c_in, 3, 3))), Tensor(np.zeros(c))))
            c_in = c

    def features(self, img) -> list[Tensor]:
        x = ad.as_tensor(img)
        x = x.reshape(x.shape[0], 1, x.shape[-2], x.shape[-1])
        out = []
        for w, b in self.weights:
            x = ad.relu(ad.conv2d(x, w, b, stride=2, padding=1))
            out.append(x)
        return out

    def distance(self, a, b) -> Tensor:
        fb = [f.data for f in self.features(b)]
        acc = None
        for fa, fbd in zip(self.features(a), fb):
            diff = fa - fbd
            term = ad.mean(diff * diff)
            acc = term if acc is None else acc + term
        return acc


def loss_img(pred_logits: Tensor, target, perceptual: PerceptualNet | None = None) -> Tensor:
    target = np.asarray(target, dtype=float)
    if pred_logits.shape != target.shape:
        raise ad.ShapeError(f"loss_img: prediction {pred_logits.shape} vs target {target.shape}")
    img = ad.sigmoid(pred_logits)
    loss = ad.mean(ad.abs_(img - target))
    if perceptual is not None:
        loss = loss + perceptual.distance(img, target)
    return loss


# -- sequence ---------------------------------------------------------------------------

def valid_steps(tgt_cmd) -> np.ndarray:
    """Drawing commands plus the terminating EOS; later padding is ignored."""
    tgt_cmd = np.asarray(tgt_cmd)
    is_eos = tgt_cmd == _EOS
    before = np.cumsum(is_eos, axis=-1)
    return (before == 0) | ((before == 1) & is_eos)


def loss_ce(pred, tgt_cmd, tgt_bins, tgt_mask, w_cmd: float = 1.0, details: dict | None = None) -> Tensor:
    """Per-step ``w_cmd * CE(cmd) + sum of CE over used args``, averaged over valid steps."""
    tgt_cmd = np.asarray(tgt_cmd)
    valid = valid_steps(tgt_cmd).astype(float)
    n_valid = max(valid.sum(), 1.0)
    ce_cmd = ad.cross_entropy_with_logits(pred.cmd_logits, tgt_cmd)
    ce_arg = ad.cross_entropy_with_logits(pred.arg_logits, np.asarray(tgt_bins))
    used = np.asarray(tgt_mask, dtype=float) * valid[..., None]
    cmd_part = ad.sum_(ce_cmd * valid)
    arg_part = ad.sum_(ce_arg * used)
    if details is not None:
        details["cmd_ce"] = float(cmd_part.data) / n_valid
        details["arg_ce"] = float(arg_part.data) / max(used.sum(), 1.0)
    return (cmd_part * w_cmd + arg_part) * (1.0 / n_valid)


def soft_coords(arg_logits: Tensor) -> Tensor:
    """Expected coordinate under the per-argument bin distribution, (..., 8)."""
    p = ad.softmax(arg_logits)
    e = ad.matmul(p, _BIN_VALUES)
    return e.reshape(e.shape[:-1])


def junction_mask(tgt_cmd) -> np.ndarray:
    """(B, N) true at step j when cmd_j is Line/Curve continuing cmd_{j-1}."""
    c = np.asarray(tgt_cmd)
    cur = (c == _LINE) | (c == _CURVE)
    prev = np.concatenate([np.full(c.shape[:-1] + (1,), _EOS), c[..., :-1]], axis=-1) != _EOS
    return cur & prev


def loss_cons(coords_init: Tensor, coords_refine: Tensor | None, tgt_cmd) -> Tensor:
    """Squared start/previous-end gaps at every junction, summed over steps,
    averaged over the batch; applied to both predicted sequences."""
    jm = junction_mask(tgt_cmd)[:, 1:, None].astype(float)
    b = jm.shape[0]
    acc = None
    for coords in (coords_init, coords_refine):
        if coords is None:
            continue
        gap = coords[:, 1:, 0:2] - coords[:, :-1, 6:8]
        term = ad.sum_(gap * gap * jm)
        acc = term if acc is None else acc + term
    return acc * (1.0 / b)


def curve_mask(tgt_cmd):
    c = np.asarray(tgt_cmd)
    return c == _LINE, c == _CURVE


def lift_to_cubic(coords, tgt_cmd):
    """Relaxed argument vectors -> flattened control points, lifting by the
    ground-truth command type (Lines get evenly spaced inner controls)."""
    is_line, is_curve = curve_mask(tgt_cmd)
    line = ad.matmul(coords, _LINE_LIFT) if isinstance(coords, Tensor) else coords @ _LINE_LIFT
    return line * is_line[..., None].astype(float) + coords * is_curve[..., None].astype(float)


def loss_bezier(coords_init: Tensor, coords_refine: Tensor | None, gt_coords, tgt_cmd, aux=DEFAULT_AUX) -> Tensor:
    """Squared distances at the auxiliary parameters between predicted and
    target curves, over steps whose target is a Line or Curve."""
    b = np.asarray(tgt_cmd).shape[0]
    if len(aux) == 0:
        return ad.Tensor(0.0) if coords_init is None else ad.sum_(coords_init * 0.0)
    W = bernstein(aux)  # (k, 4)
    # (8, 2k): control-point vector -> stacked (x, y) samples
    sample = np.zeros((8, 2 * len(aux)))
    for i in range(len(aux)):
        for k in range(4):
            sample[2 * k, 2 * i] = W[i, k]
            sample[2 * k + 1, 2 * i + 1] = W[i, k]
    gt_pts = lift_to_cubic(np.asarray(gt_coords, dtype=float), tgt_cmd) @ sample
    acc = None
    for coords in (coords_init, coords_refine):
        if coords is None:
            continue
        diff = ad.matmul(lift_to_cubic(coords, tgt_cmd), sample) - gt_pts
        term = ad.sum_(diff * diff)
        acc = term if acc is None else acc + term
    return acc * (1.0 / b)


def loss_kl(mu, logvar) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over features, averaged over rows."""
    mu, logvar = ad.as_tensor(mu), ad.as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise ad.ShapeError(f"loss_kl: {mu.shape} vs {logvar.shape}")
    rows = 1 if mu.ndim == 1 else int(np.prod(mu.shape[:-1]))
    inner = 1.0 + logvar - mu * mu - ad.exp(logvar)
    return ad.sum_(inner) * (-0.5 / rows)
