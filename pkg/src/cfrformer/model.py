"""CFRTransformer: complex embedding, frequency positional encoding, factored
(frequency then time) attention blocks, a position-wise FFN and a complex
output head.

Activations carry two real streams (real and imaginary part) that share the
attention, FFN and LayerNorm weights; the streams are coupled only in the
complex embedding and output head. Internally the two streams are stacked on
a leading axis, shape ``(2 * B, T, F, d_model)``, which is exactly equivalent
to running the shared layers on each stream separately.
"""

from __future__ import annotations

import json
import math
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, gelu, layer_norm, linear, softmax, stack


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    n_heads: int = 4
    n_blocks: int = 2
    ffn_hidden: int | None = None
    T: int = 20
    nb: int = 5
    fb: int = 256

    def __post_init__(self):
        if self.d_model % 2:
            raise ValueError(f"d_model must be even, got {self.d_model}")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}")
        if self.n_blocks < 0:
            raise ValueError("n_blocks must be >= 0")
        if self.F < 2:
            raise ValueError("need at least two frequency bins")

    @property
    def F(self) -> int:
        return self.nb * self.fb

    @property
    def hidden(self) -> int:
        return self.ffn_hidden if self.ffn_hidden is not None else 2 * self.d_model


class ParameterStore:
    """Ordered, named collection of learnable tensors with gradient slots."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(values), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def group(self, prefix: str) -> dict[str, Tensor]:
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self._params.items() if k.startswith(prefix + ".")}

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self._params.items()}

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self._params.items()}

    def num_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def astype(self, dtype) -> "ParameterStore":
        out = ParameterStore()
        for k, t in self._params.items():
            out.add(k, t.data.astype(dtype))
        return out

    def copy(self) -> "ParameterStore":
        return self.astype(next(iter(self._params.values())).dtype) if self._params else ParameterStore()


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_out, fan_in))


def _add_attention(store: ParameterStore, prefix: str, d: int, rng):
    for name in ("q", "k", "v", "o"):
        store.add(f"{prefix}.w_{name}", _glorot(rng, d, d))
        store.add(f"{prefix}.b_{name}", np.zeros(d))


def _add_norm(store: ParameterStore, prefix: str, d: int):
    store.add(f"{prefix}.gain", np.ones(d))
    store.add(f"{prefix}.bias", np.zeros(d))


def _add_complex_linear(store: ParameterStore, prefix: str, n_in: int, n_out: int, rng, bias: bool = True):
    store.add(f"{prefix}.w_r", _glorot(rng, n_out, n_in))
    store.add(f"{prefix}.w_i", _glorot(rng, n_out, n_in))
    if bias:
        store.add(f"{prefix}.b_r", np.zeros(n_out))
        store.add(f"{prefix}.b_i", np.zeros(n_out))


def init_params(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> ParameterStore:
    """Glorot-uniform weights, zero biases, unit LayerNorm gains."""
    d = cfg.d_model
    store = ParameterStore()
    _add_complex_linear(store, "embed", 2, d, rng)
    for b in range(cfg.n_blocks):
        _add_attention(store, f"blocks.{b}.freq_attn", d, rng)
        _add_norm(store, f"blocks.{b}.freq_norm", d)
        _add_attention(store, f"blocks.{b}.time_attn", d, rng)
        _add_norm(store, f"blocks.{b}.time_norm", d)
    store.add("ffn.w1", _glorot(rng, cfg.hidden, d))
    store.add("ffn.b1", np.zeros(cfg.hidden))
    store.add("ffn.w2", _glorot(rng, d, cfg.hidden))
    store.add("ffn.b2", np.zeros(d))
    _add_norm(store, "ffn_norm", d)
    _add_complex_linear(store, "head", d, 1, rng)
    return store.astype(dtype)


# ---------------------------------------------------------------------------
# layers


def complex_linear(x_r: Tensor, x_i: Tensor, w_r: Tensor, w_i: Tensor, b_r: Tensor | None = None, b_i: Tensor | None = None):
    """Complex-linear map ``(W_r + jW_i)(x_r + jx_i)`` on split real parts.

    Weights are stored as (out, in); the trailing axis of the inputs must
    equal ``in``.
    """
    n_in = w_r.shape[1]
    if w_r.shape != w_i.shape:
        raise ValueError(f"w_r {w_r.shape} and w_i {w_i.shape} differ")
    if x_r.shape != x_i.shape or x_r.shape[-1] != n_in:
        raise ValueError(f"inputs {x_r.shape}/{x_i.shape} incompatible with in-features {n_in}")
    out_r = linear(x_r, w_r) - linear(x_i, w_i)
    out_i = linear(x_r, w_i) + linear(x_i, w_r)
    if b_r is not None:
        out_r = out_r + b_r
    if b_i is not None:
        out_i = out_i + b_i
    return out_r, out_i


def positional_encoding(F: int, d_model: int) -> np.ndarray:
    """Sinusoidal table over frequency bins, one full period per harmonic."""
    if F < 2 or d_model % 2:
        raise ValueError("need F >= 2 and even d_model")
    f = np.arange(F)[:, None] / (F - 1)
    k = np.arange(d_model // 2)[None, :] + 1
    angle = 2.0 * np.pi * f * k
    pe = np.empty((F, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, p: dict, n_heads: int, attn_mask=None, stats=None, weights_out=None) -> Tensor:
    """Scaled dot-product attention over sequences shaped ``(N, L, d)``.

    ``attn_mask`` is added to the scores before the softmax (broadcast to
    ``(N, heads, L, L)``). ``stats``, when given, accumulates the number of
    score entries allocated under key ``"scores"``; ``weights_out`` (a list)
    receives the attention weights.
    """
    N, L, d = q.shape
    if d % n_heads:
        raise ValueError(f"d_model={d} not divisible by n_heads={n_heads}")
    dh = d // n_heads

    def heads(x, w, b):
        return linear(x, p[w], p[b]).reshape(N, x.shape[1], n_heads, dh).transpose(0, 2, 1, 3)

    qh = heads(q, "w_q", "b_q")
    kh = heads(k, "w_k", "b_k")
    vh = heads(v, "w_v", "b_v")
    scores = (qh @ kh.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
    if attn_mask is not None:
        scores = scores + Tensor(np.asarray(attn_mask, dtype=scores.dtype))
    if stats is not None:
        stats["scores"] = stats.get("scores", 0) + scores.data.size
    weights = softmax(scores, axis=-1)
    if weights_out is not None:
        weights_out.append(weights.data)
    ctx = (weights @ vh).transpose(0, 2, 1, 3).reshape(N, L, d)
    return linear(ctx, p["w_o"], p["b_o"])


def _attend(x: Tensor, params: ParameterStore, prefix: str, n_heads: int, attn_mask, stats) -> Tensor:
    sub = {} if stats is None else stats.setdefault(prefix, {})
    y = multi_head_attention(x, x, x, params.group(prefix), n_heads, attn_mask=attn_mask, stats=None if stats is None else sub)
    return y


def frequency_pass(x: Tensor, params: ParameterStore, prefix: str, n_heads: int, attn_mask=None, stats=None) -> Tensor:
    """Attention across frequency, each snapshot an independent sequence.

    ``x`` is ``(S, T, F, d)``; returns the same shape after residual + LayerNorm.
    """
    S, T, F, d = x.shape
    y = _attend(x.reshape(S * T, F, d), params, f"{prefix}.freq_attn", n_heads, attn_mask, stats).reshape(S, T, F, d)
    norm = params.group(f"{prefix}.freq_norm")
    return layer_norm(x + y, norm["gain"], norm["bias"])


def time_pass(x: Tensor, params: ParameterStore, prefix: str, n_heads: int, attn_mask=None, stats=None) -> Tensor:
    """Attention across time, each frequency bin an independent sequence."""
    S, T, F, d = x.shape
    xt = x.transpose(0, 2, 1, 3).reshape(S * F, T, d)
    y = _attend(xt, params, f"{prefix}.time_attn", n_heads, attn_mask, stats)
    y = y.reshape(S, F, T, d).transpose(0, 2, 1, 3)
    norm = params.group(f"{prefix}.time_norm")
    return layer_norm(x + y, norm["gain"], norm["bias"])


def _block(x: Tensor, params: ParameterStore, prefix: str, n_heads: int, stats=None) -> Tensor:
    x = frequency_pass(x, params, prefix, n_heads, stats=stats)
    return time_pass(x, params, prefix, n_heads, stats=stats)


def factored_block(x_r: Tensor, x_i: Tensor, params: ParameterStore, prefix: str, n_heads: int, stats=None):
    """One frequency pass then one time pass on ``(B, T, F, d)`` streams."""
    B = x_r.shape[0]
    y = _block(stack([x_r, x_i]).reshape(2 * B, *x_r.shape[1:]), params, prefix, n_heads, stats)
    return y[:B], y[B:]


def feed_forward(x: Tensor, params: ParameterStore) -> Tensor:
    h = gelu(linear(x, params["ffn.w1"], params["ffn.b1"]))
    y = linear(h, params["ffn.w2"], params["ffn.b2"])
    return layer_norm(x + y, params["ffn_norm.gain"], params["ffn_norm.bias"])


# ---------------------------------------------------------------------------
# features and forward pass


@dataclass
class FeatureGrid:
    """Masked CFR split into real, imaginary and mask channels (``T x F`` each)."""

    re: np.ndarray
    im: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_observation(cls, masked: np.ndarray, mask) -> "FeatureGrid":
        m = np.asarray(getattr(mask, "grid", mask), dtype=np.float64)
        if m.shape != masked.shape:
            raise ValueError("mask and observation shapes differ")
        keep = 1.0 - m
        return cls(re=masked.real * keep, im=masked.imag * keep, mask=m)

    @property
    def shape(self) -> tuple:
        return self.re.shape

    def as_array(self) -> np.ndarray:
        return np.stack([self.re, self.im, self.mask], axis=-1)


def _check(x: Tensor, layer: str) -> Tensor:
    if not np.isfinite(x.data).all():
        raise FloatingPointError(f"non-finite activations after {layer}")
    return x


def forward_tensors(features: FeatureGrid, params: ParameterStore, cfg: ModelConfig, stats=None):
    """Differentiable forward pass; returns real and imaginary output tensors.

    Features may be ``(T, F)`` or batched ``(B, T, F)``; outputs match.
    """
    dtype = params["embed.w_r"].dtype
    re = np.asarray(features.re, dtype=dtype)
    batched = re.ndim == 3
    if not batched:
        re = re[None]
    im = np.asarray(features.im, dtype=dtype).reshape(re.shape)
    m = np.asarray(features.mask, dtype=dtype).reshape(re.shape)
    B, T, F = re.shape
    if (T, F) != (cfg.T, cfg.F):
        raise ValueError(f"feature grid {T}x{F} does not match model geometry {cfg.T}x{cfg.F}")

    x_r = Tensor(np.stack([re, m], axis=-1))
    x_i = Tensor(np.stack([im, m], axis=-1))
    emb = params.group("embed")
    h_r, h_i = complex_linear(x_r, x_i, emb["w_r"], emb["w_i"], emb["b_r"], emb["b_i"])
    pe = Tensor(positional_encoding(F, cfg.d_model).astype(dtype))
    x = _check(stack([h_r + pe, h_i + pe]).reshape(2 * B, T, F, cfg.d_model), "embed")
    for b in range(cfg.n_blocks):
        x = _check(_block(x, params, f"blocks.{b}", cfg.n_heads, stats), f"blocks.{b}")
    x = _check(feed_forward(x, params), "ffn")
    head = params.group("head")
    out_r, out_i = complex_linear(x[:B], x[B:], head["w_r"], head["w_i"], head["b_r"], head["b_i"])
    out_r = _check(out_r, "head").reshape(B, T, F)
    out_i = _check(out_i, "head").reshape(B, T, F)
    if not batched:
        out_r, out_i = out_r[0], out_i[0]
    return out_r, out_i


def model_forward(features: FeatureGrid, params: ParameterStore, cfg: ModelConfig, stats=None) -> np.ndarray:
    """Reconstructed complex CFR grid."""
    out_r, out_i = forward_tensors(features, params, cfg, stats)
    return out_r.data.astype(np.float64) + 1j * out_i.data.astype(np.float64)


class CFRTransformer:
    """Parameters plus geometry; calling it reconstructs a CFR grid."""

    def __init__(self, cfg: ModelConfig, params: ParameterStore | None = None, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, np.random.default_rng(seed), dtype)

    def __call__(self, features: FeatureGrid) -> np.ndarray:
        return model_forward(features, self.params, self.cfg)

    def reconstruct(self, masked: np.ndarray, mask) -> np.ndarray:
        return self(FeatureGrid.from_observation(masked, mask))

    def save(self, path, extra: dict | None = None) -> None:
        save_checkpoint(path, self.params, self.cfg, extra)

    @classmethod
    def load(cls, path) -> "CFRTransformer":
        params, cfg, _ = load_checkpoint(path)
        return cls(cfg, params)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"CFRT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ParameterStore, cfg: ModelConfig, extra: dict | None = None) -> None:
    """``CFRT | u32 version | u32 header length | JSON header | float32 payloads``."""
    header = {
        "config": asdict(cfg),
        "params": [[name, list(t.shape)] for name, t in params.items()],
        "extra": extra or {},
    }
    text = json.dumps(header, sort_keys=True).encode()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(text)))
        fh.write(text)
        for _, t in params.items():
            fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    tmp.replace(path)


def load_checkpoint(path) -> tuple[ParameterStore, ModelConfig, dict]:
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a CFRT checkpoint")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    header = json.loads(blob[pos : pos + hlen])
    pos += hlen
    store = ParameterStore()
    for name, shape in header["params"]:
        n = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(shape)
        store.add(name, values.astype(np.float32))
        pos += 4 * n
    if pos != len(blob):
        raise ValueError(f"{path}: trailing or missing payload bytes")
    return store, ModelConfig(**header["config"]), header["extra"]
