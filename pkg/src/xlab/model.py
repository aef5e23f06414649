"""Miniature transformer family: encoder-only, decoder-only, encoder-decoder.

Parameter naming scheme (stable, used by freeze policies and checkpoints)::

    embed.tok                    [vocab, d]      token embeddings
    embed.pos                    [max_seq_len, d] learned absolute positions
    block.{i}.ln1.gain|bias      single-stack archs (encoder_only / decoder_only)
    block.{i}.attn.wq|wk|wv|wo   [d, d]
    block.{i}.ln2.gain|bias
    block.{i}.ff.w1 [d, d_ff]  ff.b1 [d_ff]  ff.w2 [d_ff, d]  ff.b2 [d]
    ln_f.gain|bias               final norm
    enc.block.{i}.*, enc.ln_f.*  encoder stack of encoder_decoder
    dec.block.{i}.ln1, attn, ln2, xattn (cross attention), ln3, ff; dec.ln_f
    head.out                     [d, vocab] or [d, len(head_tokens)]; absent when tied

Blocks are pre-norm: ``h + attn(ln(h))`` then ``h + ff(ln(h))``.
"""
from __future__ import annotations

import dataclasses
import json
import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Tensor, ops
from .vocab import VOCAB_SIZE

ARCHS = ("encoder_only", "decoder_only", "encoder_decoder")
INIT_STD = 0.02
LN_EPS = 1e-5


class ConfigError(ValueError):
    pass


class VocabularyError(ValueError):
    """Token id outside the model vocabulary."""


class AttentionError(ValueError):
    """An attention row has no key it may attend to."""


@dataclass(frozen=True)
class ModelConfig:
    arch: str
    d_model: int
    n_heads: int
    n_blocks: int
    d_ff: int
    vocab_size: int = VOCAB_SIZE
    max_seq_len: int = 272
    tie_output_embeddings: bool = False
    # vocabulary ids scored by head.out; None means the whole vocabulary
    head_tokens: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        for f in ("d_model", "n_heads", "n_blocks", "d_ff", "vocab_size", "max_seq_len"):
            if getattr(self, f) < 1:
                raise ConfigError(f"{f} must be positive")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if self.head_tokens is not None:
            object.__setattr__(self, "head_tokens", tuple(int(t) for t in self.head_tokens))
            if not self.head_tokens:
                raise ConfigError("head_tokens must be non-empty")
            if self.tie_output_embeddings:
                raise ConfigError("a restricted head cannot be tied to the token embeddings")
            if min(self.head_tokens) < 0 or max(self.head_tokens) >= self.vocab_size:
                raise ConfigError("head_tokens outside the vocabulary")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def head_width(self) -> int:
        return self.vocab_size if self.head_tokens is None else len(self.head_tokens)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["head_tokens"] is not None:
            d["head_tokens"] = list(d["head_tokens"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if d.get("head_tokens") is not None:
            d["head_tokens"] = tuple(d["head_tokens"])
        return cls(**d)


PRESETS = {
    "mini-base": dict(d_model=64, n_heads=4, n_blocks=4, d_ff=256),
    "mini-small": dict(d_model=32, n_heads=2, n_blocks=2, d_ff=128),
}


def preset(name: str, arch: str, **overrides) -> ModelConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None
    return ModelConfig(arch=arch, **{**base, **overrides})


def _block_shapes(prefix: str, d: int, f: int, cross: bool) -> list[tuple[str, tuple[int, ...]]]:
    shapes = [(f"{prefix}ln1.gain", (d,)), (f"{prefix}ln1.bias", (d,))]
    shapes += [(f"{prefix}attn.{w}", (d, d)) for w in ("wq", "wk", "wv", "wo")]
    shapes += [(f"{prefix}ln2.gain", (d,)), (f"{prefix}ln2.bias", (d,))]
    if cross:
        shapes += [(f"{prefix}xattn.{w}", (d, d)) for w in ("wq", "wk", "wv", "wo")]
        shapes += [(f"{prefix}ln3.gain", (d,)), (f"{prefix}ln3.bias", (d,))]
    shapes += [(f"{prefix}ff.w1", (d, f)), (f"{prefix}ff.b1", (f,)),
               (f"{prefix}ff.w2", (f, d)), (f"{prefix}ff.b2", (d,))]
    return shapes


def param_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list fully determined by the config."""
    d, f = config.d_model, config.d_ff
    shapes = [("embed.tok", (config.vocab_size, d)), ("embed.pos", (config.max_seq_len, d))]
    if config.arch == "encoder_decoder":
        stacks = [("enc.", False), ("dec.", True)]
    else:
        stacks = [("", False)]
    for prefix, cross in stacks:
        for i in range(config.n_blocks):
            shapes += _block_shapes(f"{prefix}block.{i}.", d, f, cross)
        shapes += [(f"{prefix}ln_f.gain", (d,)), (f"{prefix}ln_f.bias", (d,))]
    if not config.tie_output_embeddings:
        shapes.append(("head.out", (d, config.head_width)))
    return shapes


def _init_value(name: str, shape, rng: np.random.Generator, dtype) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "gain":
        return np.ones(shape, dtype=dtype)
    if leaf in ("bias", "b1", "b2"):
        return np.zeros(shape, dtype=dtype)
    return (rng.standard_normal(shape) * INIT_STD).astype(dtype)


class Model:
    """Config plus an ordered name -> parameter mapping."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        expected = [n for n, _ in param_shapes(config)]
        if list(params) != expected:
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ConfigError(f"parameter set does not match config (missing={missing}, unexpected={extra})")
        for name, shape in param_shapes(config):
            if params[name].shape != shape:
                raise ConfigError(f"parameter {name!r} has shape {params[name].shape}, expected {shape}")
        self.config = config
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def items(self):
        return self.params.items()

    @property
    def dtype(self) -> np.dtype:
        return self.params["embed.tok"].dtype

    def copy(self) -> "Model":
        return Model(self.config, {n: Tensor(p.data.copy(), name=n) for n, p in self.params.items()})

    def astype(self, dtype) -> "Model":
        return Model(self.config, {n: Tensor(p.data.astype(dtype), name=n) for n, p in self.params.items()})

    def head_matrix(self) -> Tensor:
        if self.config.tie_output_embeddings:
            return ops.transpose(self.params["embed.tok"])
        return self.params["head.out"]

    def __repr__(self) -> str:
        c = self.config
        return f"Model({c.arch}, d={c.d_model}, heads={c.n_heads}, blocks={c.n_blocks}, params={param_count(self)})"


def param_count(model_or_config) -> int:
    config = model_or_config.config if isinstance(model_or_config, Model) else model_or_config
    return sum(math.prod(shape) for _, shape in param_shapes(config))


def build_model(config: ModelConfig, rng_seed: int, dtype=np.float32) -> Model:
    """Initialize every parameter (normal(0, 0.02) weights, unit gains, zero biases)."""
    rng = np.random.default_rng(rng_seed)
    params = {}
    for name, shape in param_shapes(config):
        params[name] = Tensor(_init_value(name, shape, rng, dtype), name=name)
    return Model(config, params)


def narrow_head(model: Model, token_ids) -> Model:
    """Restrict the output head to ``token_ids`` (class tokens), keeping their pretrained columns.

    Scoring the narrowed head is identical to taking the full-vocabulary logits
    at those columns, i.e. an argmax restricted to the class-token subset.
    """
    token_ids = tuple(int(t) for t in token_ids)
    cfg = model.config
    if cfg.tie_output_embeddings:
        full = model.params["embed.tok"].data.T
        cols = np.asarray(token_ids)
    elif cfg.head_tokens is None:
        full = model.params["head.out"].data
        cols = np.asarray(token_ids)
    else:
        pos = {t: i for i, t in enumerate(cfg.head_tokens)}
        missing = [t for t in token_ids if t not in pos]
        if missing:
            raise ConfigError(f"head does not cover tokens {missing}")
        full = model.params["head.out"].data
        cols = np.asarray([pos[t] for t in token_ids])
    new_cfg = cfg.replace(head_tokens=token_ids, tie_output_embeddings=False)
    params = {}
    for name, _ in param_shapes(new_cfg):
        if name == "head.out":
            params[name] = Tensor(np.ascontiguousarray(full[:, cols]), name=name)
        else:
            params[name] = Tensor(model.params[name].data.copy(), name=name)
    return Model(new_cfg, params)


# ---------------------------------------------------------------------------
# forward pass

def attention(q: Tensor, k: Tensor, v: Tensor, mask=None) -> Tensor:
    """Scaled dot-product attention over the last two axes.

    ``mask`` is None, ``"causal"``, or a boolean array broadcastable to
    ``[..., seq_q, seq_k]`` where True marks keys that may be attended.
    """
    tq, tk = q.shape[-2], k.shape[-2]
    scores = ops.scale(ops.matmul(q, ops.transpose(k, _swap_last(k.ndim))), 1.0 / math.sqrt(q.shape[-1]))
    if mask is None:
        weights = ops.softmax(scores)
    elif isinstance(mask, str):
        if mask != "causal":
            raise ValueError(f"unknown mask {mask!r}")
        limits = np.minimum(np.arange(1, tq + 1), tk).astype(np.intc)
        weights = ops.softmax(scores, limits=limits)
    else:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
        if not keep.any(axis=-1).all():
            raise AttentionError("attention row is fully masked")
        weights = ops.softmax(scores, mask=keep)
    return ops.matmul(weights, v)


def _swap_last(ndim: int) -> tuple[int, ...]:
    return tuple(range(ndim - 2)) + (ndim - 1, ndim - 2)


def _limits(lengths: np.ndarray, tq: int, causal: bool) -> np.ndarray:
    """Per (batch, query) count of attendable leading keys, with right padding."""
    lim = np.broadcast_to(lengths[:, None], (lengths.shape[0], tq))
    if causal:
        lim = np.minimum(lim, np.arange(1, tq + 1)[None, :])
    if (lim < 1).any():
        raise AttentionError("attention row is fully masked (empty sequence)")
    return np.ascontiguousarray(lim, dtype=np.intc)


def _mha(model: Model, prefix: str, x: Tensor, memory: Tensor, limits: np.ndarray) -> Tensor:
    p = model.params
    c = model.config
    b, tq, d = x.shape
    tk = memory.shape[1]
    h, dh = c.n_heads, c.d_head

    def heads(t: Tensor, w: str, n: int) -> Tensor:
        return ops.transpose(ops.reshape(ops.matmul(t, p[prefix + w]), (b, n, h, dh)), (0, 2, 1, 3))

    q = heads(x, "wq", tq)
    k = heads(memory, "wk", tk)
    v = heads(memory, "wv", tk)
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    weights = ops.softmax(scores, limits=limits[:, None, :])
    ctx = ops.reshape(ops.transpose(ops.matmul(weights, v), (0, 2, 1, 3)), (b, tq, d))
    return ops.matmul(ctx, p[prefix + "wo"])


def _ln(model: Model, prefix: str, x: Tensor) -> Tensor:
    return ops.layer_norm(x, model.params[prefix + ".gain"], model.params[prefix + ".bias"], LN_EPS)


def _block(model: Model, prefix: str, h: Tensor, self_limits, memory=None, cross_limits=None) -> Tensor:
    p = model.params
    a = _ln(model, prefix + "ln1", h)
    h = ops.add(h, _mha(model, prefix + "attn.", a, a, self_limits))
    ff_ln = "ln2"
    if memory is not None:
        a = _ln(model, prefix + "ln2", h)
        h = ops.add(h, _mha(model, prefix + "xattn.", a, memory, cross_limits))
        ff_ln = "ln3"
    a = _ln(model, prefix + ff_ln, h)
    z = ops.gelu(ops.add(ops.matmul(a, p[prefix + "ff.w1"]), p[prefix + "ff.b1"]))
    return ops.add(h, ops.add(ops.matmul(z, p[prefix + "ff.w2"]), p[prefix + "ff.b2"]))


def _embed(model: Model, tokens: np.ndarray) -> Tensor:
    t = tokens.shape[1]
    tok = ops.embedding(model.params["embed.tok"], tokens)
    pos = ops.embedding(model.params["embed.pos"], np.arange(t))
    return ops.add(tok, pos)


def check_tokens(config: ModelConfig, tokens: np.ndarray) -> None:
    if tokens.shape[-1] > config.max_seq_len:
        raise ConfigError(f"sequence length {tokens.shape[-1]} exceeds max_seq_len {config.max_seq_len}")
    bad = np.argwhere((tokens < 0) | (tokens >= config.vocab_size))
    if bad.size:
        pos = tuple(int(i) for i in bad[0])
        raise VocabularyError(f"token id {int(tokens[pos])} at position {pos if len(pos) > 1 else pos[0]} "
                              f"outside vocabulary of size {config.vocab_size}")


def run_stack(model: Model, prefix: str, tokens: np.ndarray, lengths: np.ndarray, causal: bool,
              memory: Tensor | None = None, memory_lengths: np.ndarray | None = None) -> Tensor:
    """Embed ``tokens`` [B, T] and run one block stack; returns final-normed states."""
    h = _embed(model, tokens)
    tq = tokens.shape[1]
    self_limits = _limits(lengths, tq, causal)
    cross_limits = _limits(memory_lengths, tq, False) if memory is not None else None
    for i in range(model.config.n_blocks):
        h = _block(model, f"{prefix}block.{i}.", h, self_limits, memory, cross_limits)
    return _ln(model, prefix + "ln_f", h)


def head_logits(model: Model, states: Tensor) -> Tensor:
    return ops.matmul(states, model.head_matrix())


@dataclass
class ForwardOutput:
    states: Tensor
    logits: Tensor | None
    memory: Tensor | None = None


def _as_batch(tokens) -> tuple[np.ndarray, bool]:
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim != 2:
        raise ValueError(f"tokens must be 1-D or 2-D, got shape {arr.shape}")
    return arr, False


def forward(model: Model, tokens, attn_mode: str | None = None, lengths=None,
            decoder_tokens=None, decoder_lengths=None, with_logits: bool = True) -> ForwardOutput:
    """Run the model on ``tokens`` ([T] or [B, T], right padded per ``lengths``).

    Single-stack archs attend bidirectionally (encoder_only) or causally
    (decoder_only) unless ``attn_mode`` overrides it. encoder_decoder encodes
    ``tokens`` and runs the causal decoder on ``decoder_tokens`` (default: one
    ``<bos>`` step); returned states/logits are the decoder's.
    """
    from .vocab import VOCAB

    cfg = model.config
    toks, squeeze = _as_batch(tokens)
    check_tokens(cfg, toks)
    lens = np.full(toks.shape[0], toks.shape[1]) if lengths is None else np.asarray(lengths, dtype=np.int64).reshape(-1)
    if cfg.arch == "encoder_decoder":
        if attn_mode is not None:
            raise ConfigError("attn_mode cannot be overridden for encoder_decoder")
        memory = run_stack(model, "enc.", toks, lens, causal=False)
        if decoder_tokens is None:
            dec = np.full((toks.shape[0], 1), VOCAB.bos, dtype=np.int64)
        else:
            dec, _ = _as_batch(decoder_tokens)
            if squeeze and dec.shape[0] != 1:
                raise ValueError("decoder batch does not match encoder batch")
        check_tokens(cfg, dec)
        dlens = (np.full(dec.shape[0], dec.shape[1]) if decoder_lengths is None
                 else np.asarray(decoder_lengths, dtype=np.int64).reshape(-1))
        states = run_stack(model, "dec.", dec, dlens, causal=True, memory=memory, memory_lengths=lens)
    else:
        mode = attn_mode or ("bidirectional" if cfg.arch == "encoder_only" else "causal")
        if mode not in ("bidirectional", "causal"):
            raise ConfigError(f"unknown attn_mode {attn_mode!r}")
        memory = None
        states = run_stack(model, "", toks, lens, causal=(mode == "causal"))
    logits = head_logits(model, states) if with_logits else None
    if squeeze:
        states = ops.reshape(states, states.shape[1:])
        if logits is not None:
            logits = ops.reshape(logits, logits.shape[1:])
        if memory is not None:
            memory = ops.reshape(memory, memory.shape[1:])
    return ForwardOutput(states, logits, memory)


# ---------------------------------------------------------------------------
# checkpoint IO
#
# header:  b"XLABCKPT" | u32 version | u32 crc32(payload) | u64 len(payload)
# payload: u32 len | config JSON | u32 n_records | records
# record:  u16 len | name utf-8 | u8 rank | u32 extents[rank] | float32 LE data

MAGIC = b"XLABCKPT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIQ")


class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class UnknownParameterError(CheckpointError):
    pass


def checkpoint_bytes(model: Model) -> bytes:
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    parts = [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(model.params))]
    for name, p in model.params.items():
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", p.ndim))
        parts.append(struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    payload = b"".join(parts)
    return _HEADER.pack(MAGIC, FORMAT_VERSION, zlib.crc32(payload), len(payload)) + payload


def save_checkpoint(model: Model, path) -> None:
    """Write ``model`` as float32; the write is atomic (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(model))
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError("checkpoint payload ends early")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def checkpoint_from_bytes(buf: bytes, dtype=np.float32) -> Model:
    if len(buf) < _HEADER.size:
        raise CheckpointTruncatedError("file shorter than checkpoint header")
    magic, version, crc, length = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise CheckpointFormatError("not an XLABCKPT file")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    payload = buf[_HEADER.size:]
    if len(payload) < length:
        raise CheckpointTruncatedError(f"payload has {len(payload)} bytes, header declares {length}")
    if len(payload) > length:
        raise CheckpointFormatError("trailing bytes after checkpoint payload")
    if zlib.crc32(payload) != crc:
        raise CheckpointCorruptError("checkpoint CRC mismatch")
    r = _Reader(payload)
    (clen,) = r.unpack("<I")
    try:
        config = ModelConfig.from_dict(json.loads(r.take(clen)))
    except (ValueError, TypeError) as exc:
        raise CheckpointFormatError(f"bad config block: {exc}") from None
    shapes = dict(param_shapes(config))
    (n,) = r.unpack("<I")
    params = {}
    for _ in range(n):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (rank,) = r.unpack("<B")
        extents = r.unpack(f"<{rank}I") if rank else ()
        if name not in shapes:
            raise UnknownParameterError(f"unknown parameter {name!r}")
        if tuple(extents) != shapes[name]:
            raise CheckpointFormatError(f"parameter {name!r} has extents {extents}, config implies {shapes[name]}")
        count = math.prod(extents)
        data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(extents)
        params[name] = Tensor(data.astype(dtype), name=name)
    if r.pos != len(payload):
        raise CheckpointFormatError("unparsed bytes at end of payload")
    missing = [k for k in shapes if k not in params]
    if missing:
        raise CheckpointFormatError(f"checkpoint lacks parameters {missing}")
    return Model(config, {k: params[k] for k in shapes})


def load_checkpoint(path, dtype=np.float32) -> Model:
    return checkpoint_from_bytes(Path(path).read_bytes(), dtype)
