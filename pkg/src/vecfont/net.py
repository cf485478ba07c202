"""Dual-branch generator: sequence/image encoders, fusion, decoders, refiner.

Parameters live in one flat ``dict[str, Tensor]`` keyed by dotted names so
they checkpoint and grad-check uniformly.  Sequences are row-major
``(batch, tokens, d_E)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NEG_INF, Tensor
from .embedding import N_BINS, N_CMD, embed_commands, embed_sequence, init_embedding_params, positional_encoding
from .glyph_ir import N_ARGS, RELAXED_MASKS, CommandType, LengthError

ENCODER_DEPTH = 6
REFINER_DEPTH = 2
LN_EPS = 1e-5


class ConfigError(ValueError):
    pass


class ArityError(ValueError):
    pass


@dataclass
class ModelConfig:
    d_model: int = 128
    n_heads: int = 4
    dec_layers: int = 4
    ff_mult: int = 4
    n_max: int = 24
    resolution: int = 64
    n_refs: int = 4
    n_char: int = 8
    img_channels: tuple[int, ...] = (8, 16, 32, 32)

    def __post_init__(self):
        self.img_channels = tuple(self.img_channels)
        r = self.resolution
        if r < 16 or r & (r - 1):
            raise ConfigError(f"resolution must be a power of two >= 16, got {r}")
        if len(self.img_channels) != 4:
            raise ConfigError("image branch uses exactly 4 conv blocks")
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")

    @property
    def img_bottleneck(self) -> int:
        return self.resolution // 16

    def to_dict(self) -> dict:
        d = asdict(self)
        d["img_channels"] = list(self.img_channels)
        return d

    @classmethod
    def tiny(cls) -> ModelConfig:
        return cls(d_model=8, n_heads=2, dec_layers=1, ff_mult=2, n_max=6, resolution=16,
                   n_refs=2, n_char=3, img_channels=(2, 2, 2, 2))


# -- parameter construction -------------------------------------------------------

def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    d = cfg.d_model
    P: dict[str, Tensor] = {}

    def w(name, shape, std):
        P[name] = Tensor(rng.normal(0.0, std, shape), requires_grad=True, name=name)

    def zeros(name, shape):
        P[name] = Tensor(np.zeros(shape), requires_grad=True, name=name)

    def ones(name, shape):
        P[name] = Tensor(np.ones(shape), requires_grad=True, name=name)

    def lin(name, n_in, n_out, std=None):
        w(f"{name}.w", (n_in, n_out), std if std is not None else 1.0 / math.sqrt(n_in))
        zeros(f"{name}.b", (n_out,))

    def ln(name):
        ones(f"{name}.g", (d,))
        zeros(f"{name}.b", (d,))

    def attn(name):
        lin(f"{name}.q", d, d)
        # no key bias: it shifts every score in a row equally, so softmax ignores it
        w(f"{name}.k.w", (d, d), 1.0 / math.sqrt(d))
        lin(f"{name}.v", d, d)
        lin(f"{name}.o", d, d, 1.0 / math.sqrt(d) / 2)

    def ff(name):
        lin(f"{name}.fc1", d, cfg.ff_mult * d)
        lin(f"{name}.fc2", cfg.ff_mult * d, d, 1.0 / math.sqrt(cfg.ff_mult * d) / 2)

    for k, v in init_embedding_params(d, rng).items():
        v.name = k
        P[k] = v

    for i in range(ENCODER_DEPTH):
        ln(f"encoder.{i}.ln1")
        attn(f"encoder.{i}.attn")
        ln(f"encoder.{i}.ln2")
        ff(f"encoder.{i}.ff")
    ln("encoder.ln_f")
    lin("aggregator", cfg.n_refs * d, d)

    chans = (cfg.n_refs,) + cfg.img_channels
    for i in range(4):
        fan_in = chans[i] * 16
        w(f"img_enc.conv{i}.w", (chans[i + 1], chans[i], 4, 4), math.sqrt(2.0 / fan_in))
        zeros(f"img_enc.conv{i}.b", (chans[i + 1],))
    flat = cfg.img_channels[-1] * cfg.img_bottleneck ** 2
    lin("img_enc.fc", flat, d)
    ln("img_enc.ln")

    lin("fusion", 2 * d, 2 * d)
    w("class_embed", (cfg.n_char, d), 1.0)

    lin("img_dec.fc", d, flat)
    dchans = tuple(reversed(cfg.img_channels)) + (1,)
    for i in range(4):
        fan_in = dchans[i] * 4
        w(f"img_dec.deconv{i}.w", (dchans[i], dchans[i + 1], 4, 4), math.sqrt(2.0 / fan_in) / (2 if i == 3 else 1))
        zeros(f"img_dec.deconv{i}.b", (dchans[i + 1],))

    w("decoder.bos", (d,), 1.0)
    for name, depth in (("decoder", cfg.dec_layers), ("refiner", REFINER_DEPTH)):
        for i in range(depth):
            ln(f"{name}.{i}.ln1")
            attn(f"{name}.{i}.self_attn")
            ln(f"{name}.{i}.ln2")
            attn(f"{name}.{i}.cross_attn")
            ln(f"{name}.{i}.ln3")
            ff(f"{name}.{i}.ff")
        ln(f"{name}.ln_f")
        lin(f"{name}.head.fc1", d, d)
        lin(f"{name}.head.fc2", d, N_CMD + N_ARGS * N_BINS, 0.01 / math.sqrt(d))
    return P


# -- building blocks ----------------------------------------------------------------

def _linear(P, name, x):
    return ad.linear(x, P[f"{name}.w"], P[f"{name}.b"])


def _ln(P, name, x):
    return ad.layer_norm(x, P[f"{name}.g"], P[f"{name}.b"], eps=LN_EPS)


def _heads(x: Tensor, h: int) -> Tensor:
    b, t, d = x.shape
    return ad.transpose(x.reshape(b, t, h, d // h), (0, 2, 1, 3))


def attention_weights(q: Tensor, k: Tensor, mask=None) -> Tensor:
    """softmax(q k^T / sqrt(d_head) + M); ``mask`` true = blocked."""
    scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        scores = ad.masked_fill(scores, mask, NEG_INF)
    return ad.softmax(scores)


def multi_head_attention(P, name, x, mem, n_heads, mask=None, return_weights=False):
    q = _heads(_linear(P, f"{name}.q", x), n_heads)
    k = _heads(ad.linear(mem, P[f"{name}.k.w"]), n_heads)
    v = _heads(_linear(P, f"{name}.v", mem), n_heads)
    a = attention_weights(q, k, mask)
    out = ad.matmul(a, v)
    b, _, t, _ = out.shape
    out = ad.transpose(out, (0, 2, 1, 3)).reshape(b, t, x.shape[-1])
    out = _linear(P, f"{name}.o", out)
    return (out, a) if return_weights else out


def _ff(P, name, x):
    return _linear(P, f"{name}.fc2", ad.gelu(_linear(P, f"{name}.fc1", x)))


def encoder_block(P, name, x, n_heads):
    h = _ln(P, f"{name}.ln1", x)
    x = x + multi_head_attention(P, f"{name}.attn", h, h, n_heads)
    return x + _ff(P, f"{name}.ff", _ln(P, f"{name}.ln2", x))


def decoder_block(P, name, x, memory, n_heads, self_mask=None, trace=None):
    h = _ln(P, f"{name}.ln1", x)
    sa, w = multi_head_attention(P, f"{name}.self_attn", h, h, n_heads, self_mask, return_weights=True)
    if trace is not None:
        trace.append(w.data)
    x = x + sa
    x = x + multi_head_attention(P, f"{name}.cross_attn", _ln(P, f"{name}.ln2", x), memory, n_heads)
    return x + _ff(P, f"{name}.ff", _ln(P, f"{name}.ln3", x))


def causal_mask(t: int) -> np.ndarray:
    return np.triu(np.ones((t, t), dtype=bool), k=1)


# -- outputs ------------------------------------------------------------------------

@dataclass
class StyleFeature:
    f: Tensor
    mu: Tensor
    logvar: Tensor


@dataclass
class SeqPrediction:
    cmd_logits: Tensor          # (B, N, 4)
    arg_logits: Tensor          # (B, N, 8, 256)
    length: np.ndarray          # (B,) index of first predicted EOS, or N
    attn: list = field(default_factory=list)

    def tokens(self) -> tuple[np.ndarray, np.ndarray]:
        """Greedy command ids and argument bins (unused bins zeroed)."""
        cmd = self.cmd_logits.data.argmax(axis=-1)
        bins = self.arg_logits.data.argmax(axis=-1)
        return cmd, np.where(RELAXED_MASKS[cmd], bins, 0)


def first_eos_length(cmd: np.ndarray) -> np.ndarray:
    is_eos = cmd == int(CommandType.EOS)
    n = cmd.shape[-1]
    return np.where(is_eos.any(axis=-1), is_eos.argmax(axis=-1), n)


def _head(P, name, x) -> tuple[Tensor, Tensor]:
    h = ad.relu(_linear(P, f"{name}.head.fc1", x))
    out = _linear(P, f"{name}.head.fc2", h)
    b, n, _ = out.shape
    return out[:, :, :N_CMD], out[:, :, N_CMD:].reshape(b, n, N_ARGS, N_BINS)


# -- encoders -----------------------------------------------------------------------

def encode_sequences(P, cfg: ModelConfig, cmd, bins, mask, wh) -> Tensor:
    """(..., N) glyph arrays -> encoder output (..., N + 1, d)."""
    lead = np.asarray(cmd).shape[:-1]
    x = embed_sequence(P, cmd, bins, mask, wh[..., 0], wh[..., 1], cfg.n_max)
    x = x.reshape((-1,) + x.shape[-2:])
    for i in range(ENCODER_DEPTH):
        x = encoder_block(P, f"encoder.{i}", x, cfg.n_heads)
    x = _ln(P, "encoder.ln_f", x)
    return x.reshape(lead + x.shape[-2:])


def encode_image(P, cfg: ModelConfig, images) -> Tensor:
    """(B, N_r, R, R) reference images stacked channel-wise -> (B, d)."""
    x = ad.as_tensor(images)
    for i in range(4):
        x = ad.relu(ad.conv2d(x, P[f"img_enc.conv{i}.w"], P[f"img_enc.conv{i}.b"], stride=2, padding=1))
    x = x.reshape(x.shape[0], -1)
    # normalised like the sequence branch so the decoder sees well-spread codes early
    return _ln(P, "img_enc.ln", _linear(P, "img_enc.fc", x))


def decode_image(P, cfg: ModelConfig, f: Tensor, target_class) -> Tensor:
    """Style feature + target class -> (B, R, R) logits."""
    z = f + ad.embedding_lookup(P["class_embed"], np.asarray(target_class))
    s = cfg.img_bottleneck
    x = ad.relu(_linear(P, "img_dec.fc", z)).reshape(z.shape[0], cfg.img_channels[-1], s, s)
    for i in range(4):
        x = ad.transposed_conv2d(x, P[f"img_dec.deconv{i}.w"], P[f"img_dec.deconv{i}.b"], stride=2, padding=1)
        if i < 3:
            x = ad.relu(x)
    return x.reshape(x.shape[0], cfg.resolution, cfg.resolution)


def encode_refs(P, cfg: ModelConfig, ref_cmd, ref_bins, ref_mask, ref_wh, ref_images):
    """N_r reference glyphs per sample -> (f_seq (B, N+1, d), f_img (B, d))."""
    ref_cmd = np.asarray(ref_cmd)
    if ref_cmd.ndim != 3 or ref_cmd.shape[1] != cfg.n_refs:
        raise ArityError(f"expected (batch, {cfg.n_refs}, N_max) references, got {ref_cmd.shape}")
    if np.asarray(ref_images).shape[1] != cfg.n_refs:
        raise ArityError(f"expected {cfg.n_refs} reference images per sample")
    enc = encode_sequences(P, cfg, ref_cmd, ref_bins, ref_mask, np.asarray(ref_wh))
    b, r, t, d = enc.shape
    stacked = ad.transpose(enc, (0, 2, 1, 3)).reshape(b, t, r * d)
    f_seq = _linear(P, "aggregator", stacked)
    f_img = encode_image(P, cfg, ref_images)
    return f_seq, f_img


def fuse(P, f_img: Tensor, f0_seq: Tensor, stochastic: bool = True, rng=None) -> StyleFeature:
    """Linear fusion to (mu, logvar) and the reparameterised sample."""
    d = f_img.shape[-1]
    h = _linear(P, "fusion", ad.concat([f_img, f0_seq], axis=-1))
    mu, logvar = h[..., :d], h[..., d:]
    if not stochastic:
        return StyleFeature(mu, mu, logvar)
    if rng is None:
        raise ValueError("stochastic fusion needs an rng")
    eps = rng.standard_normal(mu.shape)
    return StyleFeature(mu + ad.exp(logvar * 0.5) * eps, mu, logvar)


def make_memory(P, f: Tensor, f_seq: Tensor, target_class) -> Tensor:
    """Decoder memory: fused feature (plus target-class code) replaces the modality token."""
    cls = ad.embedding_lookup(P["class_embed"], np.asarray(target_class))
    head = (f + cls).reshape(f.shape[0], 1, f.shape[-1])
    return ad.concat([head, f_seq[:, 1:]], axis=1)


# -- sequence decoders --------------------------------------------------------------

def _decoder_inputs(P, cfg, prev_cmd, prev_bins, wh) -> Tensor:
    """BOS followed by the embeddings of the given previous commands."""
    b, t = prev_cmd.shape
    d = cfg.d_model
    bos = P["decoder.bos"].reshape(1, 1, d) + (positional_encoding(np.zeros((b, 1)), d))
    if t == 0:
        return bos
    emb = embed_commands(P, prev_cmd, prev_bins, RELAXED_MASKS[prev_cmd], wh[:, 0], wh[:, 1], np.arange(1, t + 1))
    return ad.concat([bos, emb], axis=1)


def _run_decoder(P, cfg, x, memory, self_mask, name="decoder", depth=None, trace=None):
    depth = cfg.dec_layers if depth is None else depth
    for i in range(depth):
        x = decoder_block(P, f"{name}.{i}", x, memory, cfg.n_heads, self_mask, trace)
    return _ln(P, f"{name}.ln_f", x)


def decode_sequence_tf(P, cfg: ModelConfig, memory: Tensor, tgt_cmd, tgt_bins, wh) -> SeqPrediction:
    """Teacher-forced decoding: step t sees ground-truth commands before t."""
    tgt_cmd = np.asarray(tgt_cmd)
    if tgt_cmd.shape[-1] > cfg.n_max:
        raise LengthError(f"target longer than N_max={cfg.n_max}")
    n = tgt_cmd.shape[-1]
    x = _decoder_inputs(P, cfg, tgt_cmd[:, : n - 1], np.asarray(tgt_bins)[:, : n - 1], wh)
    trace: list = []
    h = _run_decoder(P, cfg, x, memory, causal_mask(n), trace=trace)
    cmd_logits, arg_logits = _head(P, "decoder", h)
    return SeqPrediction(cmd_logits, arg_logits, first_eos_length(cmd_logits.data.argmax(-1)), trace)


def decode_sequence_ar(P, cfg: ModelConfig, memory: Tensor, wh, max_len: int | None = None) -> SeqPrediction:
    """Greedy autoregressive decoding until every sample emits EOS."""
    max_len = cfg.n_max if max_len is None else max_len
    b = memory.shape[0]
    cmd = np.zeros((b, 0), dtype=np.int64)
    bins = np.zeros((b, 0, N_ARGS), dtype=np.int64)
    cmd_rows, arg_rows = [], []
    done = np.zeros(b, dtype=bool)
    with ad.no_grad():
        for t in range(max_len):
            x = _decoder_inputs(P, cfg, cmd, bins, wh)
            h = _run_decoder(P, cfg, x, memory, causal_mask(t + 1))
            c_log, a_log = _head(P, "decoder", h[:, t:t + 1])
            cmd_rows.append(c_log.data)
            arg_rows.append(a_log.data)
            c = c_log.data[:, 0].argmax(-1)
            a = np.where(RELAXED_MASKS[c], a_log.data[:, 0].argmax(-1), 0)
            cmd = np.concatenate([cmd, c[:, None]], axis=1)
            bins = np.concatenate([bins, a[:, None]], axis=1)
            done |= c == int(CommandType.EOS)
            if done.all():
                break
    cmd_logits = np.concatenate(cmd_rows, axis=1)
    arg_logits = np.concatenate(arg_rows, axis=1)
    pad = max_len - cmd_logits.shape[1]
    if pad:
        eos_row = np.full((b, pad, N_CMD), -1e4)
        eos_row[..., int(CommandType.EOS)] = 0.0
        cmd_logits = np.concatenate([cmd_logits, eos_row], axis=1)
        arg_logits = np.concatenate([arg_logits, np.zeros((b, pad, N_ARGS, N_BINS))], axis=1)
    return SeqPrediction(Tensor(cmd_logits), Tensor(arg_logits), first_eos_length(cmd_logits.argmax(-1)))


def refinement_mask(length: np.ndarray, n: int) -> np.ndarray:
    """(B, 1, 1, N) key mask: block keys at 1-based positions beyond the
    predicted length (at least the first key stays visible)."""
    pos = np.arange(1, n + 1)
    limit = np.maximum(np.asarray(length), 1)
    return (pos[None, :] > limit[:, None])[:, None, None, :]


def refine(P, cfg: ModelConfig, initial: SeqPrediction, memory: Tensor, wh) -> SeqPrediction:
    """Non-autoregressive 2-block decoder over the re-embedded initial prediction."""
    cmd, bins = initial.tokens()
    n = cmd.shape[1]
    q = embed_commands(P, cmd, bins, RELAXED_MASKS[cmd], wh[:, 0], wh[:, 1], np.arange(1, n + 1))
    trace: list = []
    h = _run_decoder(P, cfg, q, memory, refinement_mask(initial.length, n), "refiner", REFINER_DEPTH, trace)
    cmd_logits, arg_logits = _head(P, "refiner", h)
    return SeqPrediction(cmd_logits, arg_logits, first_eos_length(cmd_logits.data.argmax(-1)), trace)
