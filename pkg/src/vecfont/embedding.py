"""Coordinate quantization and the four-part command embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .glyph_ir import N_ARGS, RELAXED_MASKS, CommandType, Glyph, LengthError, RepKind, RepresentationError

N_BINS = 256
N_CMD = 4


class EmbeddingError(ValueError):
    pass


def quantize(x):
    """Map [0, 1] to bins 0..255, rounding half away from zero (clamps first)."""
    v = np.clip(np.asarray(x, dtype=float), 0.0, 1.0) * (N_BINS - 1)
    out = np.floor(v + 0.5).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def dequantize(b):
    out = np.asarray(b, dtype=float) / (N_BINS - 1)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class QuantizedCommand:
    cmd_id: int
    arg_bins: tuple[int, ...]
    mask: tuple[bool, ...]
    w_bin: int = 0
    h_bin: int = 0

    def __post_init__(self):
        if not 0 <= self.cmd_id < N_CMD:
            raise EmbeddingError(f"cmd_id {self.cmd_id} out of range")
        for b in (*self.arg_bins, self.w_bin, self.h_bin):
            if not 0 <= b < N_BINS:
                raise EmbeddingError(f"bin {b} out of range [0, {N_BINS})")
        if len(self.arg_bins) != N_ARGS or len(self.mask) != N_ARGS:
            raise EmbeddingError("expected 8 argument bins and 8 mask bits")
        object.__setattr__(self, "arg_bins", tuple(int(b) if m else 0 for b, m in zip(self.arg_bins, self.mask)))


@dataclass(frozen=True)
class GlyphArrays:
    """Quantized, padded relaxed glyph as dense arrays."""

    cmd: np.ndarray      # (N,) int
    bins: np.ndarray     # (N, 8) int, zero where masked
    mask: np.ndarray     # (N, 8) bool
    coords: np.ndarray   # (N, 8) float, dequantized bins
    w_bin: int
    h_bin: int
    length: int


def quantize_glyph(g: Glyph, n_max: int) -> GlyphArrays:
    if g.rep_kind != RepKind.RELAXED:
        raise RepresentationError("quantize_glyph expects a relaxed glyph")
    n = g.n_commands
    if n > n_max:
        raise LengthError(f"glyph has {n} commands, more than N_max={n_max}")
    cmd = np.full(n_max, int(CommandType.EOS), dtype=np.int64)
    pts = np.zeros((n_max, N_ARGS))
    for j, c in enumerate(g.drawing):
        cmd[j] = int(c.cmd)
        pts[j] = c.pts
    mask = RELAXED_MASKS[cmd]
    bins = np.where(mask, quantize(pts), 0)
    return GlyphArrays(cmd, bins, mask, dequantize(bins), quantize(g.width), quantize(g.height), n)


def positional_encoding(positions, d: int) -> np.ndarray:
    """Sinusoidal absolute encoding, shape ``positions.shape + (d,)``."""
    pos = np.asarray(positions, dtype=float)[..., None]
    i = np.arange(d)
    rate = np.power(10000.0, -(2 * (i // 2)) / d)
    ang = pos * rate
    return np.where(i % 2 == 0, np.sin(ang), np.cos(ang))


def init_embedding_params(d: int, rng: np.random.Generator) -> dict[str, Tensor]:
    def p(shape, std):
        return Tensor(rng.normal(0.0, std, shape), requires_grad=True)

    return {
        "embedding.W_cmd": p((d, N_CMD), 1.0),
        "embedding.W_args_b": p((d, N_BINS), 1.0),
        "embedding.W_args_a": p((d, N_ARGS * d), 1.0 / np.sqrt(N_ARGS * d)),
        "embedding.W_w": p((d, N_BINS), 0.5),
        "embedding.W_h": p((d, N_BINS), 0.5),
        "embedding.modality_token": p((d,), 1.0),
    }


def embed_commands(params, cmd, bins, mask, w_bin, h_bin, positions) -> Tensor:
    """Batched command embedding.

    ``cmd`` (..., N), ``bins``/``mask`` (..., N, 8), ``w_bin``/``h_bin`` (...,),
    ``positions`` (N,) -> Tensor (..., N, d).
    """
    cmd = np.asarray(cmd)
    bins = np.asarray(bins)
    mask = np.asarray(mask, dtype=bool)
    if cmd.size and (cmd.min() < 0 or cmd.max() >= N_CMD):
        raise EmbeddingError("command id out of range")
    for arr in (bins, w_bin, h_bin):
        arr = np.asarray(arr)
        if arr.size and (arr.min() < 0 or arr.max() >= N_BINS):
            raise EmbeddingError(f"bin out of range [0, {N_BINS})")
    d = params["embedding.W_cmd"].shape[0]
    e_cmd = ad.embedding_lookup(params["embedding.W_cmd"].T, cmd)
    per_arg = ad.embedding_lookup(params["embedding.W_args_b"].T, np.where(mask, bins, 0))
    per_arg = per_arg * mask[..., None].astype(float)
    flat = per_arg.reshape(per_arg.shape[:-2] + (N_ARGS * d,))
    e_args = ad.matmul(flat, params["embedding.W_args_a"].T)
    e_wh = (ad.embedding_lookup(params["embedding.W_w"].T, np.asarray(w_bin))
            + ad.embedding_lookup(params["embedding.W_h"].T, np.asarray(h_bin)))
    e_wh = e_wh.reshape(e_wh.shape[:-1] + (1, d))
    e_pos = positional_encoding(positions, d)
    return e_cmd + e_args + e_wh + e_pos


def embed_command(q: QuantizedCommand, position: int, params, n_max: int | None = None) -> Tensor:
    if position < 0 or (n_max is not None and position >= n_max + 1):
        raise EmbeddingError(f"position {position} outside the sequence")
    out = embed_commands(
        params,
        np.array([q.cmd_id]),
        np.array([q.arg_bins]),
        np.array([q.mask]),
        np.array(q.w_bin),
        np.array(q.h_bin),
        np.array([position]),
    )
    return out.reshape(out.shape[-1])


def embed_sequence(params, cmd, bins, mask, w_bin, h_bin, n_max: int) -> Tensor:
    """Modality token followed by the embedded commands at positions 1..N.

    Arrays carry any leading batch shape; returns (..., N + 1, d), one row
    per token.
    """
    cmd = np.asarray(cmd)
    if cmd.shape[-1] != n_max:
        raise LengthError(f"sequence length {cmd.shape[-1]} != N_max={n_max}; pad first")
    e = embed_commands(params, cmd, bins, mask, w_bin, h_bin, np.arange(1, n_max + 1))
    token = params["embedding.modality_token"]
    lead = e.shape[:-2]
    d = e.shape[-1]
    token = ad.reshape(token, (1,) * len(lead) + (1, d)) + np.zeros(lead + (1, d))
    return ad.concat([token, e], axis=-2)
