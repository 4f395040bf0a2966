"""Checkpoint container: bit-exact reading and writing of named tensors.

File layout: an 8-byte little-endian unsigned header length N, then N bytes
of UTF-8 JSON mapping each tensor name to
``{"dtype": "F32"|"F16"|"BF16", "shape": [...], "data_offsets": [begin, end]}``,
then a contiguous payload. Offsets are relative to the payload start and must
partition it with no gaps or overlaps. An optional ``"__metadata__"`` entry
holds a string-to-string map. This layout is byte-compatible with the common
open-weights container, so released checkpoints load directly. Files written
here use the ``.stc`` extension by convention, but any extension is accepted.

Writers are canonical: tensors are serialized in lexicographic name order and
the header JSON carries no insignificant whitespace, so identical inputs
produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .errors import (
    IoFailure,
    MalformedHeader,
    NonFiniteValue,
    OverlappingOffsets,
    TruncatedPayload,
)

DTYPES = ("F32", "F16", "BF16")
DTYPE_WIDTHS = {"F32": 4, "F16": 2, "BF16": 2}

METADATA_KEY = "__metadata__"


def _f32_to_bf16_bits(values: np.ndarray) -> np.ndarray:
    """Round-to-nearest-even truncation of float32 to bfloat16 bit patterns."""
    bits = np.ascontiguousarray(values, dtype="<f4").view("<u4")
    lsb = (bits >> np.uint32(16)) & np.uint32(1)
    rounded = bits + np.uint32(0x7FFF) + lsb
    return (rounded >> np.uint32(16)).astype("<u2")


def _bf16_bits_to_f32(bits: np.ndarray) -> np.ndarray:
    return (bits.astype("<u4") << np.uint32(16)).view("<f4")


class Tensor:
    """A dense tensor with an explicit storage dtype.

    ``data`` holds the in-memory representation: float32 for F32 and BF16
    (BF16 values are exactly representable in float32), float16 for F16.
    Arrays are made read-only on construction; tensors are immutable values.
    """

    __slots__ = ("dtype", "data")

    def __init__(self, dtype: str, data: np.ndarray):
        if dtype not in DTYPES:
            raise ValueError(f"unknown dtype {dtype!r}; expected one of {DTYPES}")
        expected = np.float16 if dtype == "F16" else np.float32
        if data.dtype != expected:
            raise ValueError(f"{dtype} tensor requires {expected} storage, got {data.dtype}")
        if not data.flags.c_contiguous:
            data = np.asarray(data, order="C")  # preserves 0-d, unlike ascontiguousarray
        data = data.view()
        data.setflags(write=False)
        self.dtype = dtype
        self.data = data

    @classmethod
    def from_values(cls, values, dtype: str = "F32", *, check_finite: bool = True) -> "Tensor":
        """Build a tensor from arbitrary numeric values, quantizing to ``dtype``."""
        arr = np.asarray(values)
        if dtype == "F16":
            out = arr.astype(np.float16)
        elif dtype == "BF16":
            flat = arr.astype(np.float32).reshape(-1)
            out = _bf16_bits_to_f32(_f32_to_bf16_bits(flat)).reshape(arr.shape)
        elif dtype == "F32":
            out = arr.astype(np.float32)
        else:
            raise ValueError(f"unknown dtype {dtype!r}; expected one of {DTYPES}")
        if check_finite and out.size and not np.isfinite(out).all():
            raise NonFiniteValue(f"non-finite value after cast to {dtype}")
        return cls(dtype, out)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def element_count(self) -> int:
        return self.data.size

    @property
    def nbytes(self) -> int:
        return self.data.size * DTYPE_WIDTHS[self.dtype]

    def to_f32(self) -> np.ndarray:
        if self.dtype == "F16":
            return self.data.astype(np.float32)
        return self.data

    def storage_bytes(self) -> bytes:
        flat = self.data.reshape(-1)
        if self.dtype == "F32":
            return flat.astype("<f4", copy=False).tobytes()
        if self.dtype == "F16":
            return flat.astype("<f2", copy=False).tobytes()
        return _f32_to_bf16_bits(flat).tobytes()

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all()) if self.data.size else True

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.dtype == other.dtype
            and self.shape == other.shape
            and self.storage_bytes() == other.storage_bytes()
        )

    def __repr__(self) -> str:
        return f"Tensor(dtype={self.dtype}, shape={self.shape})"


class TensorMap:
    """An ordered collection of named tensors plus optional string metadata."""

    __slots__ = ("entries", "metadata")

    def __init__(
        self,
        entries: Mapping[str, Tensor] | None = None,
        metadata: Mapping[str, str] | None = None,
    ):
        self.entries: dict[str, Tensor] = dict(entries or {})
        self.metadata: dict[str, str] | None = dict(metadata) if metadata else None

    @classmethod
    def from_arrays(
        cls,
        arrays: Mapping[str, np.ndarray],
        dtype: str = "F32",
        metadata: Mapping[str, str] | None = None,
    ) -> "TensorMap":
        return cls({name: Tensor.from_values(a, dtype) for name, a in arrays.items()}, metadata)

    def names(self) -> list[str]:
        return list(self.entries)

    def items(self):
        return self.entries.items()

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorMap):
            return NotImplemented
        return self.entries == other.entries and self.metadata == other.metadata

    def __repr__(self) -> str:
        return f"TensorMap({len(self.entries)} tensors)"

    def validate(self, allow_nonfinite: bool = False) -> None:
        for name, tensor in self.entries.items():
            if not isinstance(name, str) or not name:
                raise MalformedHeader("tensor names must be non-empty strings")
            if name == METADATA_KEY:
                raise MalformedHeader(f"{METADATA_KEY!r} is reserved and cannot name a tensor")
            if not allow_nonfinite and not tensor.is_finite():
                raise NonFiniteValue(f"tensor {name!r} contains NaN or Inf")


def serialize_checkpoint(tensor_map: TensorMap) -> bytes:
    """Canonical byte serialization; identical maps produce identical bytes."""
    tensor_map.validate()
    header: dict = {}
    if tensor_map.metadata:
        header[METADATA_KEY] = dict(sorted(tensor_map.metadata.items()))
    offset = 0
    chunks: list[bytes] = []
    for name in sorted(tensor_map.names()):
        tensor = tensor_map[name]
        raw = tensor.storage_bytes()
        header[name] = {
            "data_offsets": [offset, offset + len(raw)],
            "dtype": tensor.dtype,
            "shape": [int(d) for d in tensor.shape],
        }
        offset += len(raw)
        chunks.append(raw)
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<Q", len(header_bytes)) + header_bytes + b"".join(chunks)


def save_checkpoint(tensor_map: TensorMap, path: str | Path) -> None:
    data = serialize_checkpoint(tensor_map)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def content_digest(tensor_map: TensorMap) -> str:
    """SHA-256 over the canonical serialization; detects any content change."""
    return hashlib.sha256(serialize_checkpoint(tensor_map)).hexdigest()


def _reject_duplicate_keys(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise ValueError(f"duplicate header key {key!r}")
        out[key] = value
    return out


def _parse_entry(name: str, entry) -> tuple[str, tuple[int, ...], int, int]:
    if not name:
        raise MalformedHeader("empty tensor name in header")
    if not isinstance(entry, dict):
        raise MalformedHeader(f"header entry for {name!r} is not an object")
    unknown = set(entry) - {"dtype", "shape", "data_offsets"}
    if unknown:
        raise MalformedHeader(f"unknown header fields for {name!r}: {sorted(unknown)}")
    try:
        dtype = entry["dtype"]
        shape = entry["shape"]
        offsets = entry["data_offsets"]
    except KeyError as exc:
        raise MalformedHeader(f"header entry for {name!r} is missing {exc}") from exc
    if dtype not in DTYPES:
        raise MalformedHeader(f"unknown dtype {dtype!r} for {name!r}")
    if not isinstance(shape, list) or not all(isinstance(d, int) and d >= 0 for d in shape):
        raise MalformedHeader(f"invalid shape for {name!r}: {shape!r}")
    if (
        not isinstance(offsets, list)
        or len(offsets) != 2
        or not all(isinstance(o, int) for o in offsets)
        or offsets[0] < 0
        or offsets[1] < offsets[0]
    ):
        raise MalformedHeader(f"invalid data_offsets for {name!r}: {offsets!r}")
    count = 1
    for d in shape:
        count *= d
    if offsets[1] - offsets[0] != count * DTYPE_WIDTHS[dtype]:
        raise MalformedHeader(
            f"byte span of {name!r} does not match shape {shape} and dtype {dtype}"
        )
    return dtype, tuple(shape), offsets[0], offsets[1]


def deserialize_checkpoint(data: bytes, allow_nonfinite: bool = False) -> TensorMap:
    if len(data) < 8:
        raise MalformedHeader("file too short for an 8-byte header length")
    (header_len,) = struct.unpack("<Q", data[:8])
    if header_len > len(data) - 8:
        raise MalformedHeader(f"declared header length {header_len} exceeds file size")
    try:
        header = json.loads(
            data[8 : 8 + header_len].decode("utf-8"),
            object_pairs_hook=_reject_duplicate_keys,
        )
    except (UnicodeDecodeError, ValueError) as exc:
        raise MalformedHeader(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise MalformedHeader("header must be a JSON object")

    metadata = header.pop(METADATA_KEY, None)
    if metadata is not None:
        if not isinstance(metadata, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
        ):
            raise MalformedHeader(f"{METADATA_KEY} must be a string-to-string map")

    payload = memoryview(data)[8 + header_len :]
    payload_len = len(payload)

    parsed: dict[str, tuple[str, tuple[int, ...], int, int]] = {}
    for name, entry in header.items():
        parsed[name] = _parse_entry(name, entry)

    # Offsets must partition the payload: no overlaps, no gaps, full coverage.
    spans = sorted(
        ((begin, end, name) for name, (_, _, begin, end) in parsed.items() if end > begin),
        key=lambda s: (s[0], s[1]),
    )
    cursor = 0
    for begin, end, name in spans:
        if begin < cursor:
            raise OverlappingOffsets(f"tensor {name!r} overlaps the preceding span")
        if end > payload_len:
            raise TruncatedPayload(
                f"tensor {name!r} ends at {end} but payload has {payload_len} bytes"
            )
        if begin > cursor:
            raise MalformedHeader(f"payload gap before tensor {name!r}")
        cursor = end
    if cursor != payload_len:
        raise MalformedHeader(f"payload has {payload_len - cursor} uncovered trailing bytes")
    for name, (_, _, begin, end) in parsed.items():
        if begin == end and begin > payload_len:
            raise TruncatedPayload(f"tensor {name!r} starts past the payload end")

    entries: dict[str, Tensor] = {}
    for name, (dtype, shape, begin, end) in parsed.items():
        buf = payload[begin:end]
        if dtype == "F32":
            arr = np.frombuffer(buf, dtype="<f4").reshape(shape)
            tensor = Tensor("F32", arr.astype(np.float32, copy=False))
        elif dtype == "F16":
            arr = np.frombuffer(buf, dtype="<f2").reshape(shape)
            tensor = Tensor("F16", arr.astype(np.float16, copy=False))
        else:
            bits = np.frombuffer(buf, dtype="<u2")
            tensor = Tensor("BF16", _bf16_bits_to_f32(bits).reshape(shape))
        if not allow_nonfinite and not tensor.is_finite():
            raise NonFiniteValue(f"tensor {name!r} contains NaN or Inf")
        entries[name] = tensor
    return TensorMap(entries, metadata)


def load_checkpoint(path: str | Path, allow_nonfinite: bool = False) -> TensorMap:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return deserialize_checkpoint(data, allow_nonfinite=allow_nonfinite)


@dataclass
class CompatReport:
    """Structural comparison of checkpoints ahead of merging."""

    name_diffs: list[str] = field(default_factory=list)
    shape_mismatches: list[str] = field(default_factory=list)
    dtype_mismatches: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.name_diffs or self.shape_mismatches or self.dtype_mismatches)

    def summary(self) -> str:
        if self.ok:
            return "compatible"
        parts = []
        if self.name_diffs:
            parts.append(f"name differences: {self.name_diffs}")
        if self.shape_mismatches:
            parts.append(f"shape mismatches: {self.shape_mismatches}")
        if self.dtype_mismatches:
            parts.append(f"dtype mismatches: {self.dtype_mismatches}")
        return "; ".join(parts)


def validate_compat(maps: list[TensorMap]) -> CompatReport:
    """Report name-set, shape, and dtype differences across two or more maps."""
    if len(maps) < 2:
        raise ValueError("validate_compat requires at least two maps")
    report = CompatReport()
    common = set(maps[0].names())
    union = set(maps[0].names())
    for m in maps[1:]:
        names = set(m.names())
        common &= names
        union |= names
    report.name_diffs = sorted(union - common)
    first = maps[0]
    for name in sorted(common):
        ref = first[name]
        for m in maps[1:]:
            if m[name].shape != ref.shape:
                report.shape_mismatches.append(name)
                break
        for m in maps[1:]:
            if m[name].dtype != ref.dtype:
                report.dtype_mismatches.append(name)
                break
    return report
