"""Tensor container and compressed-model file formats.

Both formats are little-endian throughout and byte-exact across versions.

Tensor container (".tns"):

    magic  b"TNSR" | version u16 | entry count u32
    per entry:
        name length u16 | name utf-8
        dtype u8 (0 = float32) | ndim u8 | dims u32 x ndim
        raw data (prod(dims) * 4 bytes, little-endian float32)

Compressed model (".cwm"):

    magic  b"CERW" | version u16 | record count u32
    per record:
        name length u16 | name utf-8 | kind u8 (0 = quantized, 1 = raw)
        quantized:
            rows u32 | cols u32 | grid size u32
            scan order u8 (0 = row-major, 1 = column-major)
            model kind u8 (0 = static, 1 = adaptive, 2 = context)
            scale u16 (binary16 bits of the grid step)
            has static table u8; if set: grid-size x u16 frequencies
            symbol count u64 | payload length u64 | payload bytes
        raw:
            dtype u8 (0 = float32) | ndim u8 | dims u32 x ndim
            data length u64 | raw bytes

Reported bits per weight divide 8x the quantized records' bytes (headers
plus payloads) by the number of quantized parameters; raw records and the
file preamble are excluded.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from . import entropy
from .errors import ParseError, ShapeError
from .grids import COLUMN_MAJOR, ROW_MAJOR, Grid, QuantizedLayer, grid_from_scale, layer_from_symbols
from .rangecoder import Payload, decode

TENSOR_MAGIC = b"TNSR"
COMPRESSED_MAGIC = b"CERW"
FORMAT_VERSION = 1

_DTYPE_F32 = 0
_KIND_QUANTIZED = 0
_KIND_RAW = 1
_SCAN_CODES = {ROW_MAJOR: 0, COLUMN_MAJOR: 1}
_SCAN_NAMES = {v: n for n, v in _SCAN_CODES.items()}
_MODEL_CODES = {entropy.STATIC: 0, entropy.ADAPTIVE: 1, entropy.CONTEXT: 2}
_MODEL_NAMES = {v: n for n, v in _MODEL_CODES.items()}


# ---------------------------------------------------------------------------
# tensor container


@dataclass
class TensorFile:
    """Ordered name -> float32 ndarray container."""

    entries: Dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, name: str, array) -> None:
        a = np.ascontiguousarray(array, dtype=np.float32)
        if not np.all(np.isfinite(a)):
            raise ShapeError(f"tensor {name!r} contains non-finite entries")
        self.entries[name] = a

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name]


def write_tensor_file(tf: TensorFile, path) -> None:
    blob = bytearray()
    blob += TENSOR_MAGIC
    blob += struct.pack("<HI", FORMAT_VERSION, len(tf.entries))
    for name, arr in tf.entries.items():
        raw = name.encode("utf-8")
        blob += struct.pack("<H", len(raw)) + raw
        blob += struct.pack("<BB", _DTYPE_F32, arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


class _Reader:
    """Cursor over a byte buffer; raises ParseError with the offset."""

    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise ParseError(
                f"{self.what}: truncated at byte offset {self.pos} "
                f"(needed {size} more bytes)"
            )
        b = self.data[self.pos : self.pos + size]
        self.pos += size
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_tensor_file(path) -> TensorFile:
    """Parse a tensor container; validates magic, version and shapes."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, str(path))
    if r.take(4) != TENSOR_MAGIC:
        raise ParseError(f"{path}: bad magic at byte offset 0 (expected TNSR)")
    version, count = r.unpack("<HI")
    if version != FORMAT_VERSION:
        raise ParseError(
            f"{path}: unsupported tensor container version {version}; "
            f"supported: {FORMAT_VERSION}"
        )
    tf = TensorFile()
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        dtype, ndim = r.unpack("<BB")
        if dtype != _DTYPE_F32:
            raise ParseError(
                f"{path}: unknown dtype code {dtype} at byte offset {r.pos - 2}"
            )
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        n_bytes = int(np.prod(shape, dtype=np.int64)) * 4 if ndim else 4
        raw = r.take(n_bytes)
        tf.entries[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return tf


# ---------------------------------------------------------------------------
# convolution unfolding


def unfold_convolution(kernel, input_patches) -> Tuple[np.ndarray, np.ndarray]:
    """Flatten a conv kernel so patch matmul equals direct convolution.

    ``kernel`` is [out, in, kh, kw]; ``input_patches`` holds one flattened
    receptive field (in * kh * kw values, same layout) per column. Returns
    the (out, in*kh*kw) weight matrix and the validated patch matrix.
    """
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 4:
        raise ShapeError(f"kernel must be 4-D [out, in, kh, kw], got ndim={k.ndim}")
    out_ch, in_ch, kh, kw = k.shape
    patches = np.asarray(input_patches, dtype=np.float64)
    if patches.ndim != 2 or patches.shape[0] != in_ch * kh * kw:
        raise ShapeError(
            f"patch matrix must have {in_ch * kh * kw} rows, got {patches.shape}"
        )
    return k.reshape(out_ch, in_ch * kh * kw), patches


# ---------------------------------------------------------------------------
# compressed model


@dataclass
class QuantizedRecord:
    """One entropy-coded layer inside a compressed model."""

    name: str
    rows: int
    cols: int
    grid_size: int
    scan_order: str
    model_kind: str
    scale16_bits: int  # raw binary16 bit pattern of the grid step
    static_freqs: Optional[np.ndarray]
    symbol_count: int
    payload: bytes

    @property
    def param_count(self) -> int:
        return self.rows * self.cols

    def grid(self) -> Grid:
        (step,) = struct.unpack("<e", struct.pack("<H", self.scale16_bits))
        return grid_from_scale(self.grid_size, float(step))

    def header_bytes(self) -> int:
        return _record_size(self) - len(self.payload)

    def model(self):
        """Fresh entropy model for decoding this record."""
        if self.model_kind == entropy.STATIC:
            return entropy.make_model(
                entropy.STATIC, self.grid_size, static_counts=self.static_freqs
            )
        return entropy.make_model(
            self.model_kind, self.grid_size, zero_index=self.grid_size // 2
        )

    def decode_layer(self) -> QuantizedLayer:
        symbols = decode(
            Payload(self.payload, self.symbol_count), self.model(), self.grid_size
        )
        return layer_from_symbols(
            symbols, self.rows, self.cols, self.grid(), self.scan_order
        )


@dataclass
class RawRecord:
    """A tensor stored verbatim (not quantized, not entropy coded)."""

    name: str
    shape: Tuple[int, ...]
    data: bytes  # little-endian float32

    def array(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype="<f4").reshape(self.shape).copy()


Record = Union[QuantizedRecord, RawRecord]


@dataclass
class CompressedModel:
    version: int = FORMAT_VERSION
    records: List[Record] = field(default_factory=list)

    def quantized(self) -> List[QuantizedRecord]:
        return [r for r in self.records if isinstance(r, QuantizedRecord)]

    def bits_per_weight(self) -> float:
        total_bytes = sum(
            _record_size(r) for r in self.records if isinstance(r, QuantizedRecord)
        )
        params = sum(r.param_count for r in self.quantized())
        if params == 0:
            raise ShapeError("no quantized parameters in the model")
        return bits_per_weight(total_bytes, params)


def bits_per_weight(total_bytes: int, param_count: int) -> float:
    """8 * (header + payload bytes) / quantized parameter count."""
    if param_count <= 0:
        raise ShapeError("parameter count must be positive")
    return 8.0 * total_bytes / param_count


def scale16_bits(step: float) -> int:
    """Binary16 bit pattern of a grid step."""
    return struct.unpack("<H", struct.pack("<e", np.float16(step)))[0]


def _encode_record(rec: Record) -> bytes:
    blob = bytearray()
    raw_name = rec.name.encode("utf-8")
    blob += struct.pack("<H", len(raw_name)) + raw_name
    if isinstance(rec, QuantizedRecord):
        blob += struct.pack("<B", _KIND_QUANTIZED)
        blob += struct.pack(
            "<IIIBBH",
            rec.rows,
            rec.cols,
            rec.grid_size,
            _SCAN_CODES[rec.scan_order],
            _MODEL_CODES[rec.model_kind],
            rec.scale16_bits,
        )
        if rec.static_freqs is not None:
            blob += struct.pack("<B", 1)
            blob += np.asarray(rec.static_freqs, dtype="<u2").tobytes()
        else:
            blob += struct.pack("<B", 0)
        blob += struct.pack("<QQ", rec.symbol_count, len(rec.payload))
        blob += rec.payload
    else:
        blob += struct.pack("<B", _KIND_RAW)
        blob += struct.pack("<BB", _DTYPE_F32, len(rec.shape))
        blob += struct.pack(f"<{len(rec.shape)}I", *rec.shape)
        blob += struct.pack("<Q", len(rec.data))
        blob += rec.data
    return bytes(blob)


def _record_size(rec: Record) -> int:
    return len(_encode_record(rec))


def write_compressed(model: CompressedModel, path) -> None:
    blob = bytearray()
    blob += COMPRESSED_MAGIC
    blob += struct.pack("<HI", model.version, len(model.records))
    for rec in model.records:
        blob += _encode_record(rec)
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def read_compressed(path) -> CompressedModel:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, str(path))
    if r.take(4) != COMPRESSED_MAGIC:
        raise ParseError(f"{path}: bad magic at byte offset 0 (expected CERW)")
    version, count = r.unpack("<HI")
    if version != FORMAT_VERSION:
        raise ParseError(
            f"{path}: unsupported compressed-model version {version}; "
            f"supported: {FORMAT_VERSION}"
        )
    model = CompressedModel(version=version)
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (kind,) = r.unpack("<B")
        if kind == _KIND_QUANTIZED:
            rows, cols, grid_size, scan, mkind, scale_bits = r.unpack("<IIIBBH")
            if scan not in _SCAN_NAMES:
                raise ParseError(f"{path}: unknown scan code {scan} before offset {r.pos}")
            if mkind not in _MODEL_NAMES:
                raise ParseError(f"{path}: unknown model code {mkind} before offset {r.pos}")
            (has_static,) = r.unpack("<B")
            static_freqs = None
            if has_static:
                raw = r.take(2 * grid_size)
                static_freqs = np.frombuffer(raw, dtype="<u2").astype(np.int64)
            symbol_count, payload_len = r.unpack("<QQ")
            payload = r.take(payload_len)
            model.records.append(
                QuantizedRecord(
                    name=name,
                    rows=rows,
                    cols=cols,
                    grid_size=grid_size,
                    scan_order=_SCAN_NAMES[scan],
                    model_kind=_MODEL_NAMES[mkind],
                    scale16_bits=scale_bits,
                    static_freqs=static_freqs,
                    symbol_count=symbol_count,
                    payload=payload,
                )
            )
        elif kind == _KIND_RAW:
            dtype, ndim = r.unpack("<BB")
            if dtype != _DTYPE_F32:
                raise ParseError(
                    f"{path}: unknown dtype code {dtype} at byte offset {r.pos - 2}"
                )
            shape = r.unpack(f"<{ndim}I") if ndim else ()
            (length,) = r.unpack("<Q")
            raw = r.take(length)
            model.records.append(RawRecord(name=name, shape=shape, data=raw))
        else:
            raise ParseError(
                f"{path}: unknown record kind {kind} at byte offset {r.pos - 1}"
            )
    return model
