"""Training loop, checkpoints, few-shot synthesis and style interpolation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import net
from .autodiff import Tensor
from .autodiff.checkpoint import load_tensors, save_tensors
from .bezier import aux_params
from .data import GlyphTable
from .embedding import dequantize, quantize_glyph
from .glyph_ir import CommandType, DrawCommand, Glyph, RepKind, junction_gaps, merge_relaxed, to_relaxed
from .net import ModelConfig, SeqPrediction
from .objective import (
    LossReport,
    LossWeights,
    NumericError,
    PerceptualNet,
    loss_bezier,
    loss_ce,
    loss_cons,
    loss_img,
    loss_kl,
    soft_coords,
    total,
)
from .optim import Adam
from .raster import iou, rasterize

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, checkpoint: Path | None):
        super().__init__(message)
        self.checkpoint = checkpoint


class DomainError(ValueError):
    pass


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    batch_size: int = 8
    steps: int = 1000
    lr: float = 2e-4
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    aux_count: int = 3
    refine: bool = True
    perceptual: bool = True
    clip_norm: float | None = 1.0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")

    @property
    def aux(self) -> tuple[float, ...]:
        return aux_params(self.aux_count)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        d["model"] = ModelConfig(**d.get("model", {}))
        d["weights"] = LossWeights(**d.get("weights", {}))
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# -- batches -------------------------------------------------------------------------

@dataclass
class Batch:
    ref_cmd: np.ndarray      # (B, N_r, N)
    ref_bins: np.ndarray     # (B, N_r, N, 8)
    ref_mask: np.ndarray
    ref_wh: np.ndarray       # (B, N_r, 2)
    ref_images: np.ndarray   # (B, N_r, R, R)
    tgt_class: np.ndarray    # (B,)
    tgt_cmd: np.ndarray      # (B, N)
    tgt_bins: np.ndarray
    tgt_mask: np.ndarray
    tgt_coords: np.ndarray
    tgt_image: np.ndarray    # (B, R, R)
    dec_wh: np.ndarray       # (B, 2)

    def __len__(self) -> int:
        return len(self.tgt_class)


def decoder_wh(ref_wh: np.ndarray) -> np.ndarray:
    """Width/height bins fed to the decoder: the references' mean, rounded."""
    return np.floor(np.asarray(ref_wh, dtype=float).mean(axis=-2) + 0.5).astype(np.int64)


def make_batch(table: GlyphTable, font_idx, tgt_class, ref_classes) -> Batch:
    fi = np.asarray(font_idx)
    tc = np.asarray(tgt_class)
    rc = np.asarray(ref_classes)
    f_r = fi[:, None]
    ref_wh = table.wh[f_r, rc]
    return Batch(
        ref_cmd=table.cmd[f_r, rc],
        ref_bins=table.bins[f_r, rc],
        ref_mask=table.mask[f_r, rc],
        ref_wh=ref_wh,
        ref_images=table.images[f_r, rc],
        tgt_class=tc,
        tgt_cmd=table.cmd[fi, tc],
        tgt_bins=table.bins[fi, tc],
        tgt_mask=table.mask[fi, tc],
        tgt_coords=table.coords[fi, tc],
        tgt_image=table.images[fi, tc],
        dec_wh=decoder_wh(ref_wh),
    )


def sample_batch(table: GlyphTable, rng: np.random.Generator, batch_size: int, n_refs: int) -> Batch:
    """Random (font, target) pairs; references are distinct other glyphs of the same font."""
    c = table.n_char
    if n_refs > c - 1:
        raise ValueError(f"need {n_refs} references but the alphabet only has {c - 1} other glyphs")
    fi = rng.integers(0, table.n_fonts, batch_size)
    tc = rng.integers(0, c, batch_size)
    refs = np.empty((batch_size, n_refs), dtype=np.int64)
    for i in range(batch_size):
        others = np.delete(np.arange(c), tc[i])
        refs[i] = rng.choice(others, n_refs, replace=False)
    return make_batch(table, fi, tc, refs)


# -- one forward pass ----------------------------------------------------------------

@dataclass
class StepOutput:
    terms: dict[str, Tensor]
    details: dict[str, float]
    initial: SeqPrediction
    refined: SeqPrediction | None
    img_logits: Tensor


def forward_losses(P, cfg: TrainConfig, batch: Batch, rng: np.random.Generator | None,
                   perceptual: PerceptualNet | None = None, stochastic: bool = True) -> StepOutput:
    """Teacher-forced forward pass producing the six loss terms."""
    m = cfg.model
    f_seq, f_img = net.encode_refs(P, m, batch.ref_cmd, batch.ref_bins, batch.ref_mask, batch.ref_wh, batch.ref_images)
    style = net.fuse(P, f_img, f_seq[:, 0], stochastic=stochastic, rng=rng)
    img_logits = net.decode_image(P, m, style.f, batch.tgt_class)
    memory = net.make_memory(P, style.f, f_seq, batch.tgt_class)
    initial = net.decode_sequence_tf(P, m, memory, batch.tgt_cmd, batch.tgt_bins, batch.dec_wh)
    refined = net.refine(P, m, initial, memory, batch.dec_wh) if cfg.refine else None

    details: dict[str, float] = {}
    d_init: dict = {}
    terms = {
        "l_img": loss_img(img_logits, batch.tgt_image, perceptual),
        "l_ce_init": loss_ce(initial, batch.tgt_cmd, batch.tgt_bins, batch.tgt_mask, cfg.weights.w_cmd, d_init),
        "l_kl": loss_kl(style.mu, style.logvar),
    }
    details["cmd_ce_init"], details["arg_ce_init"] = d_init["cmd_ce"], d_init["arg_ce"]
    c_init = soft_coords(initial.arg_logits)
    c_ref = None
    if refined is not None:
        d_ref: dict = {}
        terms["l_ce_refine"] = loss_ce(refined, batch.tgt_cmd, batch.tgt_bins, batch.tgt_mask, cfg.weights.w_cmd, d_ref)
        details["cmd_ce_refine"], details["arg_ce_refine"] = d_ref["cmd_ce"], d_ref["arg_ce"]
        c_ref = soft_coords(refined.arg_logits)
    terms["l_cons"] = loss_cons(c_init, c_ref, batch.tgt_cmd)
    terms["l_bezier"] = loss_bezier(c_init, c_ref, batch.tgt_coords, batch.tgt_cmd, cfg.aux)
    return StepOutput(terms, details, initial, refined, img_logits)


# -- checkpoints ---------------------------------------------------------------------

def save_checkpoint(path, P: dict[str, Tensor], cfg: TrainConfig, step: int, opt: Adam | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = {k: v.data for k, v in P.items()}
    if opt is not None:
        tensors.update(opt.state())
    meta = {"train": cfg.to_dict(), "step": step, "adam_t": opt.t if opt else 0}
    save_tensors(path, tensors, meta)
    return path


def load_checkpoint(path) -> tuple[dict[str, Tensor], TrainConfig, dict]:
    arrays, meta = load_tensors(path)
    cfg = TrainConfig.from_dict(meta["train"])
    P = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items() if not k.startswith("adam.")}
    return P, cfg, meta


# -- training ------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: dict[str, Tensor]
    log: list[dict]
    checkpoint: Path | None = None


def train(cfg: TrainConfig, table: GlyphTable, out_dir=None, log_path=None, params=None,
          callback=None) -> TrainResult:
    """Adam on the weighted objective; one JSON-lines metric row per step.

    A non-finite loss or gradient aborts training after writing the current
    (still finite) parameters to ``out_dir/last_good.ckpt``.  ``callback``
    is called as ``callback(step, params, row)`` after every update.
    """
    if table.n_fonts == 0:
        raise ValueError("dataset is empty")
    if table.cmd.shape[-1] != cfg.model.n_max or table.images.shape[-1] != cfg.model.resolution:
        raise ValueError("dataset N_max / resolution do not match the model config")
    rng = np.random.default_rng(cfg.seed)
    P = net.init_params(cfg.model, cfg.seed) if params is None else params
    opt = Adam(P, lr=cfg.lr, clip_norm=cfg.clip_norm)
    perceptual = PerceptualNet() if cfg.perceptual else None
    out_dir = Path(out_dir) if out_dir is not None else None
    rows: list[dict] = []
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
    fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        for step in range(cfg.steps):
            batch = sample_batch(table, rng, cfg.batch_size, cfg.model.n_refs)
            out = forward_losses(P, cfg, batch, rng, perceptual)
            try:
                report: LossReport = total(out.terms, cfg.weights)
            except NumericError as e:
                raise TrainingAborted(f"step {step}: {e}", _last_good(out_dir, P, cfg, step, opt)) from e
            opt.zero_grad()
            report.total_tensor.backward()
            if not all(np.isfinite(p.grad).all() for p in P.values() if p.grad is not None):
                raise TrainingAborted(f"step {step}: non-finite gradient", _last_good(out_dir, P, cfg, step, opt))
            gnorm = opt.step()
            row = {"step": step, **report.terms, "total": report.total,
                   **{k: float(v) for k, v in out.details.items()}, "grad_norm": gnorm}
            rows.append(row)
            if fh is not None:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
            if callback is not None:
                callback(step, P, row)
            if cfg.checkpoint_every and out_dir is not None and (step + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out_dir / "model.ckpt", P, cfg, step + 1, opt)
    finally:
        if fh is not None:
            fh.close()
    ckpt = save_checkpoint(out_dir / "model.ckpt", P, cfg, cfg.steps, opt) if out_dir is not None else None
    return TrainResult(P, rows, ckpt)


def _last_good(out_dir, P, cfg, step, opt) -> Path | None:
    if out_dir is None:
        return None
    log.error("aborting at step %d, saving last good parameters", step)
    return save_checkpoint(out_dir / "last_good.ckpt", P, cfg, step, opt)


# -- inference -----------------------------------------------------------------------

@dataclass
class References:
    """N_r reference glyphs of one style as dense arrays."""

    cmd: np.ndarray      # (N_r, N)
    bins: np.ndarray     # (N_r, N, 8)
    mask: np.ndarray
    wh: np.ndarray       # (N_r, 2)
    images: np.ndarray   # (N_r, R, R)

    @classmethod
    def from_glyphs(cls, glyphs, cfg: ModelConfig, images=None) -> References:
        arrs = [quantize_glyph(to_relaxed(g), cfg.n_max) for g in glyphs]
        if images is None:
            images = [rasterize(g, cfg.resolution) for g in glyphs]
        return cls(
            np.stack([a.cmd for a in arrs]),
            np.stack([a.bins for a in arrs]),
            np.stack([a.mask for a in arrs]),
            np.array([[a.w_bin, a.h_bin] for a in arrs]),
            np.stack([np.asarray(im, dtype=float) for im in images]),
        )

    @classmethod
    def from_table(cls, table: GlyphTable, font_idx: int, classes) -> References:
        c = list(classes)
        return cls(table.cmd[font_idx, c], table.bins[font_idx, c], table.mask[font_idx, c],
                   table.wh[font_idx, c], table.images[font_idx, c])


@dataclass
class StyleCode:
    f: np.ndarray        # (d,) fused feature (posterior mean)
    f_img: np.ndarray    # (d,)
    f_seq: np.ndarray    # (N + 1, d)
    wh: np.ndarray       # (2,)


def encode_style(P, cfg: ModelConfig, refs: References) -> StyleCode:
    with ad.no_grad():
        f_seq, f_img = net.encode_refs(P, cfg, refs.cmd[None], refs.bins[None], refs.mask[None],
                                       refs.wh[None], refs.images[None])
        s = net.fuse(P, f_img, f_seq[:, 0], stochastic=False)
    return StyleCode(s.f.data[0], f_img.data[0], f_seq.data[0], decoder_wh(refs.wh))


def tokens_to_glyph(cmd: np.ndarray, bins: np.ndarray, char_class: int = 0, style_id: str = "") -> Glyph:
    """Relaxed glyph from predicted tokens, cut at the first EOS.

    A leading non-Move command is read as a Move to its end point, so the
    result always satisfies the glyph invariants.
    """
    out = []
    for j, c in enumerate(np.asarray(cmd)):
        c = CommandType(int(c))
        if c == CommandType.EOS:
            break
        pts = dequantize(np.asarray(bins[j]))
        start, c1, c2, end = (tuple(pts[2 * k:2 * k + 2]) for k in range(4))
        if not out and c != CommandType.MOVE:
            c = CommandType.MOVE
        if c == CommandType.CURVE:
            out.append(DrawCommand.make(c, RepKind.RELAXED, start, c1, c2, end))
        else:
            out.append(DrawCommand.make(c, RepKind.RELAXED, start=start, end=end))
    return Glyph(tuple(out), char_class, RepKind.RELAXED, style_id)


@dataclass
class Decoded:
    relaxed: list[Glyph]
    glyphs: list[Glyph]          # merged, compact
    initial: SeqPrediction
    refined: SeqPrediction | None


def decode_features(P, cfg: ModelConfig, f: np.ndarray, f_seq: np.ndarray, target_class, wh,
                    use_refine: bool = True) -> Decoded:
    """Autoregressive decode (+ refinement) for a batch of style features ``f`` (K, d)."""
    f = np.atleast_2d(f)
    k = f.shape[0]
    f_seq = np.broadcast_to(f_seq, (k,) + f_seq.shape[-2:])
    tc = np.broadcast_to(np.asarray(target_class), (k,))
    wh = np.broadcast_to(np.asarray(wh), (k, 2))
    with ad.no_grad():
        memory = net.make_memory(P, Tensor(f), Tensor(np.ascontiguousarray(f_seq)), tc)
        initial = net.decode_sequence_ar(P, cfg, memory, wh)
        refined = net.refine(P, cfg, initial, memory, wh) if use_refine else None
    cmd, bins = (refined or initial).tokens()
    relaxed = [tokens_to_glyph(cmd[i], bins[i], int(tc[i])) for i in range(k)]
    return Decoded(relaxed, [merge_relaxed(g) for g in relaxed], initial, refined)


def decode_image(P, cfg: ModelConfig, f: np.ndarray, target_class) -> np.ndarray:
    with ad.no_grad():
        logits = net.decode_image(P, cfg, Tensor(np.atleast_2d(f)), np.atleast_1d(target_class))
    return 1.0 / (1.0 + np.exp(-logits.data))


def select_candidate(scores) -> int:
    """Index of the highest score; ties go to the lowest index."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("no candidates")
    return int(np.argmax(scores))


@dataclass
class SynthResult:
    glyph: Glyph
    index: int
    ious: list[float]
    image: np.ndarray
    candidates: list[Glyph]
    gaps: np.ndarray            # junction gaps of the chosen relaxed candidate, before merging
    empty: bool = False


def synthesize(P, cfg: ModelConfig, refs: References, target_class: int, n_samples: int = 1, seed: int = 0,
               use_refine: bool = True, noise_scale: float = 1.0) -> SynthResult:
    """Sample ``n_samples`` latents, decode each, keep the best IOU with the synthesized image.

    Candidate ``k`` adds ``noise_scale * eps_k`` (``eps_k ~ N(0, I)``) to the
    sequence style token before deterministic fusion; the image is decoded
    once from the noise-free feature.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if not 0 <= target_class < cfg.n_char:
        raise DomainError(f"target class {target_class} outside [0, {cfg.n_char})")
    rng = np.random.default_rng(seed)
    style = encode_style(P, cfg, refs)
    image = decode_image(P, cfg, style.f, target_class)[0]
    eps = rng.standard_normal((n_samples, style.f.shape[-1]))
    f_seq = np.repeat(style.f_seq[None], n_samples, axis=0)
    f_seq[:, 0] += noise_scale * eps
    with ad.no_grad():
        f_img = np.repeat(style.f_img[None], n_samples, axis=0)
        feats = net.fuse(P, Tensor(f_img), Tensor(f_seq[:, 0]), stochastic=False).f.data
    dec = decode_features(P, cfg, feats, style.f_seq, target_class, style.wh, use_refine)
    ious = [iou(rasterize(g, cfg.resolution), image) if g.n_commands else -1.0 for g in dec.glyphs]
    if all(g.n_commands == 0 for g in dec.glyphs):
        log.warning("all %d candidates are empty; returning an empty glyph", n_samples)
        return SynthResult(dec.glyphs[0], 0, ious, image, dec.glyphs, np.zeros(0), empty=True)
    idx = select_candidate(ious)
    return SynthResult(dec.glyphs[idx], idx, ious, image, dec.glyphs, junction_gaps(dec.relaxed[idx]))


def blend(f_a: np.ndarray, f_b: np.ndarray, lam: float) -> np.ndarray:
    if not (0.0 <= lam <= 1.0) or math.isnan(lam):
        raise DomainError(f"lambda must lie in [0, 1], got {lam}")
    return (1.0 - lam) * f_a + lam * f_b


@dataclass
class InterpResult:
    f: np.ndarray
    glyphs: list[Glyph]
    images: np.ndarray


def interpolate(P, cfg: ModelConfig, refs_a: References, refs_b: References, lam: float, classes,
                use_refine: bool = True) -> InterpResult:
    """Blend the two deterministic style codes and decode each requested class."""
    a, b = encode_style(P, cfg, refs_a), encode_style(P, cfg, refs_b)
    f = blend(a.f, b.f, lam)
    f_seq = blend(a.f_seq, b.f_seq, lam)
    wh = np.floor(blend(a.wh.astype(float), b.wh.astype(float), lam) + 0.5).astype(np.int64)
    classes = list(classes)
    dec = decode_features(P, cfg, np.repeat(f[None], len(classes), 0), f_seq, classes, wh, use_refine)
    images = decode_image(P, cfg, np.repeat(f[None], len(classes), 0), classes)
    return InterpResult(f, dec.glyphs, images)


# -- evaluation ----------------------------------------------------------------------

def default_refs(target_class: int, n_char: int, n_refs: int) -> list[int]:
    """The first ``n_refs`` classes other than the target."""
    return [c for c in range(n_char) if c != target_class][:n_refs]


@dataclass
class EvalReport:
    l1: float                 # mean raster L1 of the decoded glyphs
    gap: float                # mean junction gap before merging (canvas units)
    max_gap: float
    per_glyph: np.ndarray     # (F, C) L1 values

    def as_dict(self) -> dict:
        return {"l1": self.l1, "gap": self.gap, "max_gap": self.max_gap}


def evaluate(P, cfg: ModelConfig, table: GlyphTable, use_refine: bool = True, chunk: int = 32) -> EvalReport:
    """Deterministic (posterior-mean) re-synthesis of every glyph in ``table``."""
    pairs = [(f, c) for f in range(table.n_fonts) for c in range(table.n_char)]
    l1 = np.zeros((table.n_fonts, table.n_char))
    gaps = []
    for s in range(0, len(pairs), chunk):
        part = pairs[s:s + chunk]
        fi = np.array([p[0] for p in part])
        tc = np.array([p[1] for p in part])
        rc = np.array([default_refs(c, table.n_char, cfg.n_refs) for c in tc])
        b = make_batch(table, fi, tc, rc)
        with ad.no_grad():
            f_seq, f_img = net.encode_refs(P, cfg, b.ref_cmd, b.ref_bins, b.ref_mask, b.ref_wh, b.ref_images)
            f = net.fuse(P, f_img, f_seq[:, 0], stochastic=False).f.data
        dec = decode_features(P, cfg, f, f_seq.data, tc, b.dec_wh, use_refine)
        for k, (fidx, c) in enumerate(part):
            img = rasterize(dec.glyphs[k], cfg.resolution)
            l1[fidx, c] = float(np.abs(img - table.images[fidx, c]).mean())
            gaps.extend(junction_gaps(dec.relaxed[k]).tolist())
    g = np.array(gaps) if gaps else np.zeros(1)
    return EvalReport(float(l1.mean()), float(g.mean()), float(g.max()), l1)


def _all_pairs(table: GlyphTable, n_refs: int, chunk: int):
    pairs = [(f, c) for f in range(table.n_fonts) for c in range(table.n_char)]
    for s in range(0, len(pairs), chunk):
        part = pairs[s:s + chunk]
        tc = np.array([p[1] for p in part])
        rc = np.array([default_refs(c, table.n_char, n_refs) for c in tc])
        yield make_batch(table, np.array([p[0] for p in part]), tc, rc)


def teacher_forced_ce(P, cfg: TrainConfig, table: GlyphTable, chunk: int = 32) -> dict[str, float]:
    """Deterministic teacher-forced CE of the initial and refined predictions over ``table``."""
    sums = {"ce_init": 0.0, "ce_refine": 0.0}
    n = 0
    with ad.no_grad():
        for b in _all_pairs(table, cfg.model.n_refs, chunk):
            out = forward_losses(P, cfg, b, None, None, stochastic=False)
            sums["ce_init"] += float(out.terms["l_ce_init"].data) * len(b)
            if "l_ce_refine" in out.terms:
                sums["ce_refine"] += float(out.terms["l_ce_refine"].data) * len(b)
            n += len(b)
    if not cfg.refine:
        sums["ce_refine"] = float("nan")
    return {k: v / n for k, v in sums.items()}


@dataclass(frozen=True)
class Arm:
    name: str
    aux_count: int = 3
    refine: bool = True


def ablate(base: TrainConfig, train_table: GlyphTable, test_table: GlyphTable, arms, seeds,
           out_dir=None) -> dict:
    """Train one model per (arm, seed) and report mean test raster L1 per arm.

    Each arm overrides the auxiliary-point count and the refinement flag of
    ``base``; everything else, including the data, is shared.
    """
    results = []
    for arm in arms:
        row = {"name": arm.name, "aux": arm.aux_count, "refine": arm.refine,
               "seeds": list(seeds), "errors": [], "ce_init": [], "ce_refine": []}
        for seed in seeds:
            cfg = TrainConfig.from_dict({**base.to_dict(), "seed": seed, "aux_count": arm.aux_count,
                                         "refine": arm.refine})
            run_dir = Path(out_dir) / f"{arm.name}_seed{seed}" if out_dir is not None else None
            P = train(cfg, train_table, out_dir=run_dir,
                      log_path=run_dir / "log.jsonl" if run_dir is not None else None).params
            rep = evaluate(P, cfg.model, test_table, use_refine=arm.refine)
            ce = teacher_forced_ce(P, cfg, test_table)
            row["errors"].append(rep.l1)
            row["ce_init"].append(ce["ce_init"])
            row["ce_refine"].append(ce["ce_refine"])
            log.info("arm %s seed %d: test L1 %.4f, CE init %.4f refine %.4f",
                     arm.name, seed, rep.l1, ce["ce_init"], ce["ce_refine"])
        row["mean_error"] = float(np.mean(row["errors"]))
        results.append(row)
    return {"arms": results}
