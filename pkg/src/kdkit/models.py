"""Model zoo: transformer encoder, BiLSTM with self-attention, residual
depthwise-separable CNN.

Every family shares one contract: `forward(model, token_ids, pad_mask)`
returns classification logits (num_classes,)/(B, num_classes) or per-position
logits (L, C)/(B, L, C) for sequence labeling. Padded positions never
influence non-pad outputs: attention keys are masked to -1e9 before softmax,
the LSTM recurrence carries state through masked steps, and the CNN zeroes
pad channels after every residual block and pools over non-pad positions
only.

Parameters are built from a per-spec shape manifest, so counting parameters
of a huge config never allocates it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import ops
from .errors import ContractError, DimensionError, ParameterError
from .tensor import Tensor
from .text import PAD_ID

TRANSFORMER = "transformer"
BILSTM = "bilstm"
CNN = "cnn"
FAMILIES = (TRANSFORMER, BILSTM, CNN)

CLASSIFICATION = "classification"
SEQUENCE_LABELING = "sequence_labeling"

_f32 = np.float32


def _check_common(spec) -> None:
    for name in ("vocab_size", "max_len", "num_classes"):
        v = getattr(spec, name)
        if not isinstance(v, int) or v < 1:
            raise ParameterError(f"{type(spec).__name__}.{name} must be a positive int, got {v!r}")
    if spec.vocab_size < 4:
        raise ParameterError("vocab_size must cover the 4 special tokens")
    if spec.task not in (CLASSIFICATION, SEQUENCE_LABELING):
        raise ParameterError(f"unknown task {spec.task!r}")
    if not (0.0 <= spec.dropout < 1.0):
        raise ParameterError(f"dropout must be in [0,1), got {spec.dropout}")


@dataclass(frozen=True)
class TransformerSpec:
    vocab_size: int
    max_len: int
    num_classes: int
    embed_dim: int = 256
    layers: int = 4
    attn_heads: int = 8
    ffn_dim: int | None = None
    task: str = CLASSIFICATION
    dropout: float = 0.1

    def __post_init__(self) -> None:
        if self.ffn_dim is None:
            object.__setattr__(self, "ffn_dim", 4 * self.embed_dim)
        _check_common(self)
        for name in ("embed_dim", "layers", "attn_heads", "ffn_dim"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ParameterError(f"TransformerSpec.{name} must be a positive int, got {v!r}")
        if self.embed_dim % self.attn_heads != 0:
            raise ParameterError(
                f"attn_heads ({self.attn_heads}) must divide embed_dim ({self.embed_dim})"
            )

    @property
    def family(self) -> str:
        return TRANSFORMER


@dataclass(frozen=True)
class BiLstmSpec:
    vocab_size: int
    max_len: int
    num_classes: int
    embed_dim: int = 64
    hidden_dim: int = 64
    layers: int = 1
    attn_heads: int = 1
    task: str = CLASSIFICATION
    dropout: float = 0.1

    def __post_init__(self) -> None:
        _check_common(self)
        for name in ("embed_dim", "hidden_dim", "layers", "attn_heads"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ParameterError(f"BiLstmSpec.{name} must be a positive int, got {v!r}")
        if (2 * self.hidden_dim) % self.attn_heads != 0:
            raise ParameterError(
                f"attn_heads ({self.attn_heads}) must divide 2*hidden_dim ({2 * self.hidden_dim})"
            )

    @property
    def family(self) -> str:
        return BILSTM


@dataclass(frozen=True)
class CnnSpec:
    vocab_size: int
    max_len: int
    num_classes: int
    embed_dim: int = 64
    blocks: int = 2
    kernel_size: int = 3
    task: str = CLASSIFICATION
    dropout: float = 0.1

    def __post_init__(self) -> None:
        _check_common(self)
        for name in ("embed_dim", "blocks", "kernel_size"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ParameterError(f"CnnSpec.{name} must be a positive int, got {v!r}")
        if self.kernel_size % 2 != 1:
            raise ParameterError(f"kernel_size must be odd, got {self.kernel_size}")

    @property
    def family(self) -> str:
        return CNN


ModelSpec = TransformerSpec | BiLstmSpec | CnnSpec


def spec_to_dict(spec: ModelSpec) -> dict:
    d = {f.name: getattr(spec, f.name) for f in fields(spec)}
    d["family"] = spec.family
    return d


def spec_from_dict(d: dict) -> ModelSpec:
    d = dict(d)
    family = d.pop("family", None)
    cls = {TRANSFORMER: TransformerSpec, BILSTM: BiLstmSpec, CNN: CnnSpec}.get(family)
    if cls is None:
        raise ParameterError(f"unknown model family {family!r}")
    return cls(**d)


# ------------------------------------------------------------- manifests

def param_shapes(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) manifest; build_model allocates exactly this."""
    if isinstance(spec, TransformerSpec):
        v, p, h, f, c = spec.vocab_size, spec.max_len, spec.embed_dim, spec.ffn_dim, spec.num_classes
        shapes = [
            ("embed.token", (v, h)),
            ("embed.pos", (p, h)),
            ("embed.ln.gamma", (h,)),
            ("embed.ln.beta", (h,)),
        ]
        for i in range(spec.layers):
            e = f"enc{i}"
            shapes += [
                (f"{e}.attn.wq", (h, h)), (f"{e}.attn.bq", (h,)),
                (f"{e}.attn.wk", (h, h)), (f"{e}.attn.bk", (h,)),
                (f"{e}.attn.wv", (h, h)), (f"{e}.attn.bv", (h,)),
                (f"{e}.attn.wo", (h, h)), (f"{e}.attn.bo", (h,)),
                (f"{e}.ln1.gamma", (h,)), (f"{e}.ln1.beta", (h,)),
                (f"{e}.ffn.w1", (h, f)), (f"{e}.ffn.b1", (f,)),
                (f"{e}.ffn.w2", (f, h)), (f"{e}.ffn.b2", (h,)),
                (f"{e}.ln2.gamma", (h,)), (f"{e}.ln2.beta", (h,)),
            ]
        shapes += [("head.w", (h, c)), ("head.b", (c,))]
        return shapes

    if isinstance(spec, BiLstmSpec):
        v, e, h, c = spec.vocab_size, spec.embed_dim, spec.hidden_dim, spec.num_classes
        shapes = [("embed.token", (v, e))]
        in_dim = e
        for i in range(spec.layers):
            for d in ("fwd", "bwd"):
                shapes += [
                    (f"lstm{i}.{d}.wx", (in_dim, 4 * h)),
                    (f"lstm{i}.{d}.wh", (h, 4 * h)),
                    (f"lstm{i}.{d}.b", (4 * h,)),
                ]
            in_dim = 2 * h
        m = 2 * h
        shapes += [
            ("attn.wq", (m, m)), ("attn.bq", (m,)),
            ("attn.wk", (m, m)), ("attn.bk", (m,)),
            ("attn.wv", (m, m)), ("attn.bv", (m,)),
            ("attn.wo", (m, m)), ("attn.bo", (m,)),
            ("head.w", (m, c)), ("head.b", (c,)),
        ]
        return shapes

    if isinstance(spec, CnnSpec):
        v, e, k, c = spec.vocab_size, spec.embed_dim, spec.kernel_size, spec.num_classes
        shapes = [("embed.token", (v, e))]
        for i in range(spec.blocks):
            b = f"block{i}"
            shapes += [
                (f"{b}.dw", (k, e)),
                (f"{b}.pw", (e, e)),
                (f"{b}.pwb", (e,)),
                (f"{b}.ln.gamma", (e,)),
                (f"{b}.ln.beta", (e,)),
            ]
        shapes += [("head.w", (e, c)), ("head.b", (c,))]
        return shapes

    raise ParameterError(f"unknown spec type {type(spec).__name__}")


def spec_param_count(spec: ModelSpec) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_shapes(spec))


@dataclass
class Model:
    spec: ModelSpec
    params: dict[str, Tensor]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def family(self) -> str:
        return self.spec.family

    def named_data(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def load_data(self, blobs: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in blobs:
                raise ContractError(f"missing parameter {name!r}")
            if blobs[name].shape != p.data.shape:
                raise DimensionError(
                    f"parameter {name!r}: got {blobs[name].shape}, expected {p.data.shape}"
                )
            p.data = blobs[name].astype(_f32, copy=True)


def count_parameters(model: Model) -> int:
    return sum(t.data.size for t in model.params.values())


def _sinusoidal_positions(max_len: int, dim: int) -> np.ndarray:
    pe = np.zeros((max_len, dim), dtype=_f32)
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    idx = np.arange(0, dim, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, idx / dim)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : pe[:, 1::2].shape[1]])
    return pe


def _xavier(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = shape[0] if len(shape) > 1 else shape[0]
    fan_out = shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(_f32)


def _init_array(spec: ModelSpec, name: str, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "gamma":
        return np.ones(shape, _f32)
    if leaf in ("beta", "pwb") or (leaf.startswith("b") and len(shape) == 1):
        return np.zeros(shape, _f32)
    if name.startswith("embed."):
        return (rng.standard_normal(shape) * 0.02).astype(_f32)
    if isinstance(spec, TransformerSpec):
        return (rng.standard_normal(shape) * 0.02).astype(_f32)
    if isinstance(spec, BiLstmSpec) and leaf in ("wx", "wh"):
        k = 1.0 / math.sqrt(spec.hidden_dim)
        return rng.uniform(-k, k, size=shape).astype(_f32)
    if isinstance(spec, CnnSpec) and leaf == "dw":
        limit = math.sqrt(6.0 / (shape[0] + 1))
        return rng.uniform(-limit, limit, size=shape).astype(_f32)
    return _xavier(rng, shape)


def build_model(spec: ModelSpec, seed: int = 0) -> Model:
    """Allocate and deterministically initialize all parameters.
    Same spec + seed always gives bit-identical tensors."""
    rng = np.random.default_rng(seed)
    params = {
        name: Tensor(_init_array(spec, name, shape, rng), requires_grad=True)
        for name, shape in param_shapes(spec)
    }
    buffers = {}
    if isinstance(spec, CnnSpec):
        buffers["posenc"] = _sinusoidal_positions(spec.max_len, spec.embed_dim)
    return Model(spec=spec, params=params, buffers=buffers)


# --------------------------------------------------------------- forward

def _mha(
    x: Tensor,
    mask4: np.ndarray,
    params: dict[str, Tensor],
    prefix: str,
    heads: int,
) -> Tensor:
    """Multi-head scaled dot-product self-attention with -1e9 pad masking."""
    b, l, h = x.shape
    dh = h // heads
    q = ops.add(ops.matmul(x, params[f"{prefix}.wq"]), params[f"{prefix}.bq"])
    k = ops.add(ops.matmul(x, params[f"{prefix}.wk"]), params[f"{prefix}.bk"])
    v = ops.add(ops.matmul(x, params[f"{prefix}.wv"]), params[f"{prefix}.bv"])
    q = ops.transpose(ops.reshape(q, (b, l, heads, dh)), (0, 2, 1, 3))
    k = ops.transpose(ops.reshape(k, (b, l, heads, dh)), (0, 2, 1, 3))
    v = ops.transpose(ops.reshape(v, (b, l, heads, dh)), (0, 2, 1, 3))
    scores = ops.scalar_mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    scores = ops.masked_fill(scores, mask4, -1e9)
    attn = ops.softmax(scores, axis=-1)
    ctx = ops.matmul(attn, v)
    ctx = ops.reshape(ops.transpose(ctx, (0, 2, 1, 3)), (b, l, h))
    return ops.add(ops.matmul(ctx, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])


def _head(x: Tensor, params: dict[str, Tensor], task: str) -> Tensor:
    if task == CLASSIFICATION:
        first = x[:, 0]
        return ops.add(ops.matmul(first, params["head.w"]), params["head.b"])
    return ops.add(ops.matmul(x, params["head.w"]), params["head.b"])


def _forward_transformer(model: Model, ids, mask, train, rng) -> Tensor:
    spec: TransformerSpec = model.spec
    p = model.params
    b, l = ids.shape
    x = ops.embedding_lookup(p["embed.token"], ids)
    x = ops.add(x, p["embed.pos"][: l])
    x = ops.layer_norm(x, p["embed.ln.gamma"], p["embed.ln.beta"])
    if train and spec.dropout > 0:
        x = ops.dropout(x, spec.dropout, rng)
    mask4 = mask.reshape(b, 1, 1, l)
    for i in range(spec.layers):
        e = f"enc{i}"
        a = _mha(x, mask4, p, f"{e}.attn", spec.attn_heads)
        if train and spec.dropout > 0:
            a = ops.dropout(a, spec.dropout, rng)
        x = ops.layer_norm(ops.add(x, a), p[f"{e}.ln1.gamma"], p[f"{e}.ln1.beta"])
        f = ops.relu(ops.add(ops.matmul(x, p[f"{e}.ffn.w1"]), p[f"{e}.ffn.b1"]))
        f = ops.add(ops.matmul(f, p[f"{e}.ffn.w2"]), p[f"{e}.ffn.b2"])
        if train and spec.dropout > 0:
            f = ops.dropout(f, spec.dropout, rng)
        x = ops.layer_norm(ops.add(x, f), p[f"{e}.ln2.gamma"], p[f"{e}.ln2.beta"])
    return _head(x, p, spec.task)


def _forward_bilstm(model: Model, ids, mask, train, rng) -> Tensor:
    spec: BiLstmSpec = model.spec
    p = model.params
    b, l = ids.shape
    x = ops.embedding_lookup(p["embed.token"], ids)
    if train and spec.dropout > 0:
        x = ops.dropout(x, spec.dropout, rng)
    rev = (slice(None), slice(None, None, -1))
    mask_rev = np.ascontiguousarray(mask[:, ::-1])
    for i in range(spec.layers):
        pre_f = ops.add(ops.matmul(x, p[f"lstm{i}.fwd.wx"]), p[f"lstm{i}.fwd.b"])
        h_f = ops.lstm(pre_f, p[f"lstm{i}.fwd.wh"], mask)
        x_rev = x[rev]
        pre_b = ops.add(ops.matmul(x_rev, p[f"lstm{i}.bwd.wx"]), p[f"lstm{i}.bwd.b"])
        h_b = ops.lstm(pre_b, p[f"lstm{i}.bwd.wh"], mask_rev)[rev]
        x = ops.concat([h_f, h_b], axis=-1)
    a = _mha(x, mask.reshape(b, 1, 1, l), p, "attn", spec.attn_heads)
    if train and spec.dropout > 0:
        a = ops.dropout(a, spec.dropout, rng)
    x = ops.add(x, a)
    return _head(x, p, spec.task)


def _forward_cnn(model: Model, ids, mask, train, rng) -> Tensor:
    spec: CnnSpec = model.spec
    p = model.params
    b, l = ids.shape
    mask3 = Tensor(mask[:, :, None])
    x = ops.embedding_lookup(p["embed.token"], ids)
    x = ops.add(x, Tensor(model.buffers["posenc"][:l]))
    x = ops.mul(x, mask3)
    if train and spec.dropout > 0:
        x = ops.dropout(x, spec.dropout, rng)
    for i in range(spec.blocks):
        blk = f"block{i}"
        y = ops.conv1d_depthwise(x, p[f"{blk}.dw"])
        y = ops.add(ops.conv1d_pointwise(y, p[f"{blk}.pw"]), p[f"{blk}.pwb"])
        y = ops.relu(ops.layer_norm(y, p[f"{blk}.ln.gamma"], p[f"{blk}.ln.beta"]))
        # Re-zero pads so padding stays equivalent to the conv's zero boundary.
        x = ops.mul(ops.add(x, y), mask3)
    if spec.task == CLASSIFICATION:
        pooled = ops.mean_pool(x, mask)
        return ops.add(ops.matmul(pooled, p["head.w"]), p["head.b"])
    return ops.add(ops.matmul(x, p["head.w"]), p["head.b"])


_FORWARDS = {TRANSFORMER: _forward_transformer, BILSTM: _forward_bilstm, CNN: _forward_cnn}


def forward(
    model: Model,
    token_ids: np.ndarray,
    pad_mask: np.ndarray | None = None,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Logits for a batch (B, L) or a single sequence (L,) of token ids.

    pad_mask defaults to token_ids != PAD. Sequences longer than the spec's
    max_len are a contract error, as is train=True without an rng when the
    spec has dropout.
    """
    ids = np.asarray(token_ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ContractError("token_ids must be integers")
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None, :]
    if ids.ndim != 2:
        raise DimensionError(f"token_ids must be 1-D or 2-D, got shape {ids.shape}")
    if ids.shape[1] == 0:
        raise ContractError("empty sequence")
    if ids.shape[1] > model.spec.max_len:
        raise ContractError(
            f"sequence length {ids.shape[1]} exceeds max_len {model.spec.max_len}"
        )
    if pad_mask is None:
        mask = (ids != PAD_ID).astype(_f32)
    else:
        mask = np.asarray(pad_mask, dtype=_f32)
        if squeeze and mask.ndim == 1:
            mask = mask[None, :]
        if mask.shape != ids.shape:
            raise DimensionError(f"pad_mask {mask.shape} vs token_ids {ids.shape}")
    if train and model.spec.dropout > 0 and rng is None:
        raise ContractError("train-mode forward with dropout needs an rng")
    out = _FORWARDS[model.family](model, ids, mask, train, rng)
    if squeeze:
        out = out[0]
    return out


# ------------------------------------------------------------ desk specs

def desk_spec(
    family: str,
    vocab_size: int,
    max_len: int,
    num_classes: int,
    task: str = CLASSIFICATION,
    size: str = "tiny",
) -> ModelSpec:
    """Small presets that mirror the real model ladder's proportions, sized
    to train on a laptop CPU in seconds. Transformer sizes: tiny, mini,
    small, teacher."""
    if family == TRANSFORMER:
        dims = {
            "tiny": dict(embed_dim=32, layers=2, attn_heads=2, ffn_dim=128),
            "mini": dict(embed_dim=64, layers=4, attn_heads=4, ffn_dim=256),
            "small": dict(embed_dim=128, layers=4, attn_heads=8, ffn_dim=512),
            "teacher": dict(embed_dim=256, layers=4, attn_heads=8, ffn_dim=1024),
        }
        if size not in dims:
            raise ParameterError(f"unknown transformer desk size {size!r}")
        return TransformerSpec(
            vocab_size=vocab_size, max_len=max_len, num_classes=num_classes,
            task=task, **dims[size],
        )
    if family == BILSTM:
        return BiLstmSpec(
            vocab_size=vocab_size, max_len=max_len, num_classes=num_classes,
            task=task, embed_dim=64, hidden_dim=64, layers=1, attn_heads=1,
        )
    if family == CNN:
        return CnnSpec(
            vocab_size=vocab_size, max_len=max_len, num_classes=num_classes,
            task=task, embed_dim=64, blocks=2, kernel_size=3,
        )
    raise ParameterError(f"unknown family {family!r}")


def table_spec(size: str, vocab_size: int = 30522, max_len: int = 512, num_classes: int = 2) -> TransformerSpec:
    """Published transformer ladder configs (layers, hidden, heads), for
    parameter counting against the reported sizes."""
    dims = {
        "tiny": dict(layers=2, embed_dim=128, attn_heads=2),
        "mini": dict(layers=4, embed_dim=256, attn_heads=4),
        "small": dict(layers=4, embed_dim=512, attn_heads=8),
        "base": dict(layers=12, embed_dim=768, attn_heads=12),
    }
    if size not in dims:
        raise ParameterError(f"unknown ladder size {size!r}")
    return TransformerSpec(
        vocab_size=vocab_size, max_len=max_len, num_classes=num_classes, **dims[size]
    )
