"""Spatiotemporal dependency learning encoder.

Each layer runs a time-oriented attention block (timestamps attend to each
other), a relation-oriented block (the transposed representation, so channels
attend to each other over the window) and fuses both.  Two independent stacks
exist per model: one for the original window (length L) and one for its
differenced twin (length L-1).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DimensionError
from .tensor import Tensor


@dataclass
class EncoderConfig:
    d_in: int
    window: int
    d_model: int = 256
    n_heads: int = 1
    n_layers: int = 1
    enable_time_block: bool = True
    enable_rel_block: bool = True
    ff_inner: int = 0  # 0 means d_model
    leaky_slope: float = 0.01

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not (self.enable_time_block or self.enable_rel_block):
            raise ConfigError("enable_time_block and enable_rel_block cannot both be false")
        for name in ("d_in", "window", "d_model", "n_heads", "n_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.window < 2:
            raise ConfigError(f"window must be >= 2 for the differenced stream, got {self.window}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.ff_inner < 0:
            raise ConfigError(f"ff_inner must be >= 0, got {self.ff_inner}")

    @property
    def inner(self) -> int:
        return self.ff_inner or self.d_model

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_table(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, d_model, 2, dtype=np.float64) * (-np.log(10000.0) / d_model))
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(pos * div)
    table[:, 1::2] = np.cos(pos * div)[:, : d_model // 2]
    return table


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


class EncoderParams:
    """Learnable weights of one encoder stack, keyed by dotted names.

    Weights of disabled blocks are never created, so they cannot appear on a tape.
    """

    def __init__(self, config: EncoderConfig, seq_len: int, tensors: dict[str, Tensor]):
        self.config = config
        self.seq_len = seq_len
        self.tensors = tensors
        self.positional = sinusoidal_table(seq_len, config.d_model)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.tensors.items())

    @classmethod
    def init(cls, config: EncoderConfig, seq_len: int, rng: np.random.Generator) -> "EncoderParams":
        dm, inner = config.d_model, config.inner
        shapes: dict[str, tuple] = {}

        def lin(prefix, n_in, n_out):
            shapes[f"{prefix}.w"] = ("xavier", n_in, n_out)
            shapes[f"{prefix}.b"] = ("zeros", n_out)

        def norm(prefix, n):
            shapes[f"{prefix}.gain"] = ("ones", n)
            shapes[f"{prefix}.bias"] = ("zeros", n)

        def ff(prefix, n_in, n_out):
            lin(f"{prefix}.ff1", n_in, inner)
            lin(f"{prefix}.ff2", inner, n_out)

        shapes["embed.w"] = ("xavier", config.d_in, dm)
        for i in range(config.n_layers):
            p = f"layer{i}"
            if config.enable_time_block:
                for proj in ("q", "k", "v", "o"):
                    lin(f"{p}.time.{proj}", dm, dm)
                norm(f"{p}.time.ln1", dm)
                ff(f"{p}.time", dm, dm)
                norm(f"{p}.time.ln2", dm)
            if config.enable_rel_block:
                for proj in ("q", "k", "v", "o"):
                    lin(f"{p}.rel.{proj}", seq_len, seq_len)
                norm(f"{p}.rel.ln1", seq_len)
                ff(f"{p}.rel", dm, dm)
                norm(f"{p}.rel.ln2", dm)
            width = 2 * dm if (config.enable_time_block and config.enable_rel_block) else dm
            norm(f"{p}.fuse.ln1", width)
            ff(f"{p}.fuse", width, dm)
            norm(f"{p}.fuse.ln2", dm)

        tensors = {}
        for name, (kind, *dims) in shapes.items():
            if kind == "xavier":
                value = xavier_uniform(rng, dims[0], dims[1])
            elif kind == "ones":
                value = np.ones(dims[0])
            else:
                value = np.zeros(dims[0])
            tensors[name] = Tensor(value, requires_grad=True, name=name)
        return cls(config, seq_len, tensors)


def embed(window, params: EncoderParams) -> Tensor:
    """Value projection of a normalised window plus the fixed positional table."""
    x = tn.as_tensor(window)
    w = params["embed.w"]
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"embedding expects {w.shape[0]} variables, got window shape {x.shape}")
    if x.shape[-2] != params.seq_len:
        raise DimensionError(f"embedding expects length {params.seq_len}, got window shape {x.shape}")
    return tn.add(tn.matmul(x, w), params.positional)


def self_attention(x: Tensor, params: EncoderParams, prefix: str, n_heads: int = 1, trace=None) -> Tensor:
    """Scaled dot-product self-attention over the second-to-last axis."""
    q = tn.linear(x, params[f"{prefix}.q.w"], params[f"{prefix}.q.b"])
    k = tn.linear(x, params[f"{prefix}.k.w"], params[f"{prefix}.k.b"])
    v = tn.linear(x, params[f"{prefix}.v.w"], params[f"{prefix}.v.b"])
    width = q.shape[-1]
    dh = width // n_heads
    heads = []
    for h in range(n_heads):
        cols = (Ellipsis, slice(h * dh, (h + 1) * dh))
        qh, kh, vh = (q, k, v) if n_heads == 1 else (q[cols], k[cols], v[cols])
        scores = tn.mul(tn.matmul(qh, tn.transpose(kh)), 1.0 / np.sqrt(dh))
        attn = tn.softmax_rows(scores)
        if trace is not None:
            trace.setdefault(f"{prefix}.attn", []).append(attn.data)
        heads.append(tn.matmul(attn, vh))
    out = heads[0] if n_heads == 1 else tn.concat(heads, axis=-1)
    return tn.linear(out, params[f"{prefix}.o.w"], params[f"{prefix}.o.b"])


def _ln(x: Tensor, params: EncoderParams, prefix: str) -> Tensor:
    return tn.layer_norm(x, params[f"{prefix}.gain"], params[f"{prefix}.bias"])


def _ff(x: Tensor, params: EncoderParams, prefix: str) -> Tensor:
    return tn.conv1d_pointwise_ff(
        x, params[f"{prefix}.ff1.w"], params[f"{prefix}.ff1.b"], params[f"{prefix}.ff2.w"], params[f"{prefix}.ff2.b"]
    )


def time_block(H: Tensor, params: EncoderParams, layer: int = 0, trace=None) -> Tensor:
    p = f"layer{layer}.time"
    h_hat = _ln(tn.add(H, self_attention(H, params, p, params.config.n_heads, trace)), params, f"{p}.ln1")
    return _ln(tn.add(h_hat, _ff(h_hat, params, p)), params, f"{p}.ln2")


def rel_block(H: Tensor, params: EncoderParams, layer: int = 0, trace=None) -> Tensor:
    """Attention among the d_model channels, each a length-L token.

    The first layer norm runs over the length-L rows of the transposed matrix;
    the second runs over d_model after transposing back.
    """
    p = f"layer{layer}.rel"
    Ht = tn.transpose(H)
    h_hat = _ln(tn.add(Ht, self_attention(Ht, params, p, 1, trace)), params, f"{p}.ln1")
    back = tn.transpose(h_hat)
    return _ln(tn.add(back, _ff(back, params, p)), params, f"{p}.ln2")


def fuse(H_time: Tensor | None, H_rel: Tensor | None, params: EncoderParams, layer: int = 0) -> Tensor:
    """Concatenate both branches on the feature axis, normalise and project back to d_model.

    With one branch disabled the single enabled branch goes through the same
    norm/feedforward/norm path.
    """
    p = f"layer{layer}.fuse"
    parts = [h for h in (H_time, H_rel) if h is not None]
    if len(parts) == 2 and parts[0].shape != parts[1].shape:
        raise DimensionError(f"fuse shape mismatch: {parts[0].shape} vs {parts[1].shape}")
    cat = parts[0] if len(parts) == 1 else tn.concat(parts, axis=-1)
    return _ln(_ff(_ln(cat, params, f"{p}.ln1"), params, p), params, f"{p}.ln2")


def sdl_layer(H: Tensor, params: EncoderParams, layer: int, trace=None) -> Tensor:
    cfg = params.config
    h_time = time_block(H, params, layer, trace) if cfg.enable_time_block else None
    h_rel = rel_block(H, params, layer, trace) if cfg.enable_rel_block else None
    return fuse(h_time, h_rel, params, layer)


def encode_stream(window, params: EncoderParams, trace=None) -> Tensor:
    H = embed(window, params)
    for layer in range(params.config.n_layers):
        H = sdl_layer(H, params, layer, trace)
    return H


class DetectorParams:
    """All learnable state: both encoder stacks and the view heads."""

    def __init__(self, config: EncoderConfig, enc_orig: EncoderParams, enc_diff: EncoderParams, views: dict[str, Tensor]):
        self.config = config
        self.enc_orig = enc_orig
        self.enc_diff = enc_diff
        self.views = views

    @classmethod
    def init(cls, config: EncoderConfig, seed: int, with_views: bool = True) -> "DetectorParams":
        from .views import init_view_params

        rng = np.random.default_rng(seed)
        enc_orig = EncoderParams.init(config, config.window, rng)
        enc_diff = EncoderParams.init(config, config.window - 1, rng)
        views = init_view_params(config.d_model, rng) if with_views else {}
        return cls(config, enc_orig, enc_diff, views)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [(f"orig.{n}", t) for n, t in self.enc_orig.named_parameters()]
        out += [(f"diff.{n}", t) for n, t in self.enc_diff.named_parameters()]
        out += [(f"views.{n}", t) for n, t in self.views.items()]
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for t in self.parameters():
            t.grad = None

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for name, t in self.named_parameters():
            t.data = np.array(arrays[name], dtype=np.float64)


def encode(batch, params: DetectorParams, trace=None) -> tuple[Tensor, Tensor]:
    """Encode a :class:`~dconad.data.WindowBatch` (or a single window pair).

    Returns ``(H_t, H_d)`` with shapes ``(..., L, d_model)`` and ``(..., L-1, d_model)``.
    """
    windows, diff_windows = batch.windows, batch.diff_windows
    H_t = encode_stream(windows, params.enc_orig, trace)
    H_d = encode_stream(diff_windows, params.enc_diff, trace)
    return H_t, H_d
