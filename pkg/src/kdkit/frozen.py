"""Frozen-model serialization (KDFZ) and tape-free inference.

KDFZ is a little-endian container:

  magic "KDFZ" | version u32 | model-type u8 | header-len u32 | header JSON
  blob-count u32
  per blob: name-len u16, name UTF-8, dtype u8 (0=f32 1=f16 2=int8),
            ndim u8, dims u32[], [scale f32 for int8], raw data
  crc32 u32 over every preceding byte

int8 uses symmetric quantization, scale = max|w| / 127 (1.0 for all-zero
blobs), so dequantization error is at most scale/2 per element. The CRC is
checked before any blob is parsed; a damaged file never yields a partial
model. Loaded models carry requires_grad=False parameters, so their forward
passes never touch the tape machinery.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, FormatError, ParameterError
from .models import BILSTM, CNN, TRANSFORMER, Model, ModelSpec, build_model, forward, spec_from_dict, spec_to_dict
from .text import PAD_ID

MAGIC = b"KDFZ"
VERSION = 1
PRECISIONS = ("f32", "f16", "int8")

_DTYPE_CODE = {"f32": 0, "f16": 1, "int8": 2}
_FAMILY_CODE = {TRANSFORMER: 0, BILSTM: 1, CNN: 2}
_CODE_FAMILY = {v: k for k, v in _FAMILY_CODE.items()}

_f32 = np.float32


def quantize_int8(w: np.ndarray) -> tuple[np.ndarray, float]:
    scale = float(np.max(np.abs(w))) / 127.0
    if scale == 0.0:
        scale = 1.0
    q = np.round(w.astype(np.float64) / scale)
    return q.astype(np.int8), scale


def dequantize_int8(q: np.ndarray, scale: float) -> np.ndarray:
    return (q.astype(_f32) * _f32(scale)).astype(_f32)


def _encode_blob(name: str, data: np.ndarray, precision: str) -> bytes:
    raw_name = name.encode("utf-8")
    parts = [struct.pack("<H", len(raw_name)), raw_name]
    parts.append(struct.pack("<BB", _DTYPE_CODE[precision], data.ndim))
    parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
    if precision == "f32":
        parts.append(data.astype("<f4").tobytes())
    elif precision == "f16":
        parts.append(data.astype("<f2").tobytes())
    else:
        q, scale = quantize_int8(data)
        parts.append(struct.pack("<f", scale))
        parts.append(q.tobytes())
    return b"".join(parts)


def export_frozen(model: Model, path: str, precision: str = "f32") -> int:
    """Serialize a model; returns bytes written."""
    if precision not in PRECISIONS:
        raise ParameterError(f"precision must be one of {PRECISIONS}, got {precision!r}")
    header = json.dumps(spec_to_dict(model.spec), sort_keys=True).encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<B", _FAMILY_CODE[model.spec.family]),
        struct.pack("<I", len(header)),
        header,
        struct.pack("<I", len(model.params)),
    ]
    for name, tensor in model.params.items():
        parts.append(_encode_blob(name, tensor.data, precision))
    body = b"".join(parts)
    blob = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


class _Reader:
    def __init__(self, buf: bytes, path: str):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated while reading {what}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f32(self, what: str) -> float:
        return struct.unpack("<f", self.take(4, what))[0]


@dataclass
class FrozenModel:
    """A read-only model for inference. Parameters never require grad, so
    forward passes skip tape recording entirely."""

    spec: ModelSpec
    model: Model
    precision: str
    _mask_scratch: dict = field(default_factory=dict, repr=False)

    def logits(self, token_ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(token_ids)
        if not np.issubdtype(ids.dtype, np.integer):
            raise ContractError(f"token ids must be integers, got {ids.dtype}")
        if ids.ndim == 1:
            ids = ids[None, :]
        # reuse the mask buffer across same-shape calls
        mask = self._mask_scratch.get(ids.shape)
        if mask is None:
            mask = np.empty(ids.shape, dtype=_f32)
            self._mask_scratch[ids.shape] = mask
        mask[:] = ids != PAD_ID
        if not mask.any(axis=1).all():
            raise ContractError("input row is all padding")
        out = forward(self.model, ids, mask)
        result = out.data
        return result[0] if np.asarray(token_ids).ndim == 1 else result


def infer_frozen(frozen: FrozenModel, token_ids: np.ndarray) -> np.ndarray:
    return frozen.logits(token_ids)


def load_frozen(path: str) -> FrozenModel:
    """Parse and validate a KDFZ file. The CRC is verified before any blob
    is decoded; magic, version, and structure errors name the failing field."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < len(MAGIC) + 4 + 4:
        raise FormatError(f"{path}: truncated file (no room for magic and checksum)")
    if buf[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    body, (crc_stored,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise FormatError(f"{path}: checksum mismatch, file is corrupt")

    r = _Reader(body, path)
    r.take(len(MAGIC), "magic")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}, expected {VERSION}")
    type_code = r.u8("model-type")
    if type_code not in _CODE_FAMILY:
        raise FormatError(f"{path}: unknown model-type byte {type_code}")
    header_len = r.u32("header length")
    try:
        header = json.loads(r.take(header_len, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad header JSON ({exc})") from None
    spec = spec_from_dict(header)
    if spec.family != _CODE_FAMILY[type_code]:
        raise FormatError(
            f"{path}: model-type byte says {_CODE_FAMILY[type_code]!r} "
            f"but header says {spec.family!r}"
        )

    blobs: dict[str, np.ndarray] = {}
    precision = "f32"
    n_blobs = r.u32("blob count")
    for b in range(n_blobs):
        name_len = r.u16(f"blob {b} name length")
        name = r.take(name_len, f"blob {b} name").decode("utf-8")
        dtype_code = r.u8(f"blob {name!r} dtype")
        ndim = r.u8(f"blob {name!r} ndim")
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"blob {name!r} dims"))
        count = int(np.prod(dims)) if dims else 1
        if dtype_code == 0:
            raw = r.take(4 * count, f"blob {name!r} data")
            arr = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(_f32)
        elif dtype_code == 1:
            precision = "f16"
            raw = r.take(2 * count, f"blob {name!r} data")
            arr = np.frombuffer(raw, dtype="<f2").reshape(dims).astype(_f32)
        elif dtype_code == 2:
            precision = "int8"
            scale = r.f32(f"blob {name!r} scale")
            raw = r.take(count, f"blob {name!r} data")
            arr = dequantize_int8(np.frombuffer(raw, dtype=np.int8).reshape(dims), scale)
        else:
            raise FormatError(f"{path}: blob {name!r} has unknown dtype code {dtype_code}")
        blobs[name] = arr
    if r.pos != len(body):
        raise FormatError(f"{path}: {len(body) - r.pos} trailing bytes after last blob")

    model = build_model(spec, seed=0)
    model.load_data(blobs)
    for tensor in model.params.values():
        tensor.requires_grad = False
    return FrozenModel(spec=spec, model=model, precision=precision)


def freeze(model: Model) -> FrozenModel:
    """In-memory freeze: copy parameters into a grad-free twin."""
    twin = build_model(model.spec, seed=0)
    twin.load_data({k: t.data.copy() for k, t in model.params.items()})
    for tensor in twin.params.values():
        tensor.requires_grad = False
    return FrozenModel(spec=model.spec, model=twin, precision="f32")


def expected_file_bytes(spec: ModelSpec, precision: str) -> int:
    """Exact KDFZ size for a spec at a precision, recomputed from the layout."""
    if precision not in PRECISIONS:
        raise ParameterError(f"precision must be one of {PRECISIONS}, got {precision!r}")
    from .models import param_shapes

    header = json.dumps(spec_to_dict(spec), sort_keys=True).encode("utf-8")
    total = len(MAGIC) + 4 + 1 + 4 + len(header) + 4
    unit = {"f32": 4, "f16": 2, "int8": 1}[precision]
    for name, shape in param_shapes(spec):
        count = int(np.prod(shape)) if shape else 1
        total += 2 + len(name.encode("utf-8")) + 1 + 1 + 4 * len(shape)
        if precision == "int8":
            total += 4
        total += unit * count
    return total + 4
