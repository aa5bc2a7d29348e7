"""Reading and writing transformer weight archives.

Archive layout (single file, compatible with the de-facto tensor archive
format):

    [8-byte LE u64 header_len][header_len bytes UTF-8 JSON][data region]

The JSON header maps tensor name -> {"dtype": "BF16"|"F16"|"F32",
"shape": [...], "data_offsets": [begin, end)} plus an optional
"__metadata__" object of string -> string. Output files pack the data
region contiguously in lexicographic name order and serialize the header
with sorted keys, so saving is byte-reproducible.

Sharded models are described by an index file whose "weight_map" object
maps tensor name -> shard filename. Merged output is always one file.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .dtypes import (
    BF16,
    F32,
    ITEMSIZE,
    bf16_bits_to_f32,
    decode_to_f32,
    encode_from_f32,
    f32_to_bf16_bits,
    validate_dtype,
)
from .errors import (
    DtypeError,
    FormatError,
    MissingShardError,
    ShardConflictError,
)

_HEADER_LEN_BYTES = 8
_METADATA_KEY = "__metadata__"


@dataclass(frozen=True)
class TensorRecord:
    """One named weight tensor: raw little-endian bytes plus dtype and shape."""

    name: str
    dtype: str
    shape: tuple[int, ...]
    data: bytes

    def __post_init__(self):
        validate_dtype(self.dtype)
        if len(self.shape) < 1:
            raise FormatError(f"tensor {self.name!r}: rank-0 shapes are not supported")
        if any(d < 0 for d in self.shape):
            raise FormatError(f"tensor {self.name!r}: negative extent in shape {self.shape}")
        expected = self.num_elements * ITEMSIZE[self.dtype]
        if expected != len(self.data):
            raise FormatError(
                f"tensor {self.name!r}: shape {self.shape} x {self.dtype} needs "
                f"{expected} bytes, buffer has {len(self.data)}"
            )

    @property
    def num_elements(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n

    @property
    def nbytes(self) -> int:
        return len(self.data)

    def to_f32_array(self) -> np.ndarray:
        """Widen to a float32 ndarray of this record's shape (exact for BF16/F16)."""
        return decode_to_f32(self.data, self.dtype).reshape(self.shape)

    @staticmethod
    def from_f32_array(name: str, values: np.ndarray, dtype: str = F32) -> "TensorRecord":
        return TensorRecord(
            name=name,
            dtype=dtype,
            shape=tuple(int(d) for d in values.shape),
            data=encode_from_f32(values, dtype),
        )


def to_f32(record: TensorRecord) -> TensorRecord:
    """Convert a record to F32. BF16/F16 widen exactly; F32 passes through."""
    if record.dtype == F32:
        return record
    return TensorRecord(record.name, F32, record.shape,
                        decode_to_f32(record.data, record.dtype).tobytes())


def to_bf16(record: TensorRecord) -> TensorRecord:
    """Round an F32 record to BF16 (round-to-nearest-even on the upper 16 bits)."""
    if record.dtype != F32:
        raise DtypeError(f"to_bf16 expects an F32 record, got {record.dtype}")
    bits = f32_to_bf16_bits(np.frombuffer(record.data, dtype="<f4"))
    return TensorRecord(record.name, BF16, record.shape, bits.astype("<u2").tobytes())


def bf16_roundtrip_identity(bits: np.ndarray) -> bool:
    """True when narrow(widen(bits)) reproduces the BF16 bits exactly."""
    return bool(np.array_equal(f32_to_bf16_bits(bf16_bits_to_f32(bits)),
                               np.ascontiguousarray(bits, dtype=np.uint16)))


class Checkpoint:
    """Ordered mapping of tensor name -> TensorRecord plus free-form metadata.

    Tensor names are unique and iteration is always lexicographic by name,
    regardless of construction or on-disk shard order. Instances are treated
    as immutable values after construction.
    """

    def __init__(self, tensors=(), metadata: dict[str, str] | None = None):
        items: dict[str, TensorRecord] = {}
        for rec in tensors:
            if rec.name in items:
                raise FormatError(f"duplicate tensor name {rec.name!r}")
            items[rec.name] = rec
        self.tensors: dict[str, TensorRecord] = {k: items[k] for k in sorted(items)}
        self.metadata: dict[str, str] = dict(metadata or {})

    def __iter__(self) -> Iterator[TensorRecord]:
        return iter(self.tensors.values())

    def __len__(self) -> int:
        return len(self.tensors)

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __getitem__(self, name: str) -> TensorRecord:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def num_parameters(self) -> int:
        return sum(rec.num_elements for rec in self)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (self.metadata == other.metadata
                and list(self.tensors) == list(other.tensors)
                and all(a.dtype == b.dtype and a.shape == b.shape and a.data == b.data
                        for a, b in zip(self, other)))

    def __repr__(self) -> str:
        return f"Checkpoint({len(self)} tensors, {self.num_parameters()} parameters)"


def _parse_header(header_blob: bytes, data_len: int, source: str):
    """Parse and validate a decoded header blob. Returns (entries, metadata).

    Offsets in the returned entries are absolute file positions.
    """
    try:
        header = json.loads(header_blob)
    except json.JSONDecodeError as exc:
        raise FormatError(
            f"{source}: header JSON is malformed at byte {_HEADER_LEN_BYTES + exc.pos}: {exc.msg}"
        ) from None
    if not isinstance(header, dict):
        raise FormatError(f"{source}: header must be a JSON object")

    data_start = _HEADER_LEN_BYTES + len(header_blob)
    metadata: dict[str, str] = {}
    entries: dict[str, tuple[str, tuple[int, ...], int, int]] = {}
    for name, info in header.items():
        if name == _METADATA_KEY:
            if not isinstance(info, dict) or not all(
                    isinstance(k, str) and isinstance(v, str) for k, v in info.items()):
                raise FormatError(f"{source}: {_METADATA_KEY} must map strings to strings")
            metadata = dict(info)
            continue
        try:
            dtype = info["dtype"]
            shape = tuple(int(d) for d in info["shape"])
            begin, end = (int(x) for x in info["data_offsets"])
        except (KeyError, TypeError, ValueError):
            raise FormatError(f"{source}: tensor {name!r} has a malformed header entry") from None
        try:
            validate_dtype(dtype)
        except DtypeError as exc:
            raise FormatError(f"{source}: tensor {name!r}: {exc}") from None
        if not (0 <= begin <= end <= data_len):
            raise FormatError(
                f"{source}: tensor {name!r} offsets [{begin}, {end}) fall outside the "
                f"data region of {data_len} bytes starting at byte {data_start}"
            )
        entries[name] = (dtype, shape, data_start + begin, data_start + end)
    return entries, metadata


class ArchiveReader:
    """Header-parsed view of a single archive file; tensor bytes read on demand.

    Reads use os.pread so concurrent workers can share one reader without
    locking. Only requested tensors are ever resident.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._fd = os.open(self.path, os.O_RDONLY)
        try:
            size = os.fstat(self._fd).st_size
            head = os.pread(self._fd, _HEADER_LEN_BYTES, 0)
            if len(head) < _HEADER_LEN_BYTES:
                raise FormatError(f"{self.path}: file too short for 8-byte header length "
                                  f"(got {len(head)} bytes at offset 0)")
            header_len = int.from_bytes(head, "little")
            if _HEADER_LEN_BYTES + header_len > size:
                raise FormatError(f"{self.path}: header length field {header_len} at byte 0 "
                                  f"exceeds file size {size}")
            blob = os.pread(self._fd, header_len, _HEADER_LEN_BYTES)
            data_len = size - _HEADER_LEN_BYTES - header_len
            self.entries, self.metadata = _parse_header(blob, data_len, str(self.path))
        except Exception:
            os.close(self._fd)
            raise

    def names(self) -> list[str]:
        return sorted(self.entries)

    def shape(self, name: str) -> tuple[int, ...]:
        return self.entries[name][1]

    def dtype(self, name: str) -> str:
        return self.entries[name][0]

    def num_elements(self, name: str) -> int:
        n = 1
        for d in self.entries[name][1]:
            n *= d
        return n

    def read(self, name: str) -> TensorRecord:
        dtype, shape, begin, end = self.entries[name]
        data = os.pread(self._fd, end - begin, begin)
        return TensorRecord(name, dtype, shape, data)

    def close(self):
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ShardedReader:
    """Lazy reader over a shard set described by an index file."""

    def __init__(self, index_path: Path):
        try:
            spec = json.loads(index_path.read_text("utf-8"))
            weight_map = spec["weight_map"]
            if not isinstance(weight_map, dict):
                raise TypeError
        except (json.JSONDecodeError, KeyError, TypeError):
            raise FormatError(
                f"{index_path}: shard index must be JSON with a 'weight_map' object"
            ) from None
        self.path = index_path
        self._readers: list[ArchiveReader] = []
        self._by_name: dict[str, ArchiveReader] = {}
        self.metadata: dict[str, str] = {}
        try:
            for shard_name in sorted(set(weight_map.values())):
                shard_path = index_path.parent / shard_name
                if not shard_path.exists():
                    raise MissingShardError(
                        f"shard {shard_name!r} listed in {index_path.name} is missing"
                    )
                reader = ArchiveReader(shard_path)
                self._readers.append(reader)
                self.metadata.update(reader.metadata)
                for name in reader.names():
                    if name in self._by_name:
                        raise ShardConflictError(
                            f"tensor {name!r} appears in more than one shard "
                            f"(second occurrence in {shard_name!r})"
                        )
                    self._by_name[name] = reader
            for name in weight_map:
                if name not in self._by_name:
                    raise MissingShardError(
                        f"tensor {name!r} mapped to shard {weight_map[name]!r} "
                        f"was not found in it"
                    )
        except Exception:
            self.close()
            raise

    def names(self) -> list[str]:
        return sorted(self._by_name)

    def shape(self, name: str) -> tuple[int, ...]:
        return self._by_name[name].shape(name)

    def dtype(self, name: str) -> str:
        return self._by_name[name].dtype(name)

    def num_elements(self, name: str) -> int:
        return self._by_name[name].num_elements(name)

    def read(self, name: str) -> TensorRecord:
        return self._by_name[name].read(name)

    def close(self):
        for reader in self._readers:
            reader.close()
        self._readers = []

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _find_index_file(path: Path) -> Path | None:
    if path.is_file() and path.name.endswith(".index.json"):
        return path
    if path.is_dir():
        candidates = sorted(path.glob("*.index.json"))
        if not candidates:
            raise FormatError(f"{path}: directory contains no *.index.json shard index")
        if len(candidates) > 1:
            raise FormatError(f"{path}: multiple shard indexes found: "
                              f"{[c.name for c in candidates]}")
        return candidates[0]
    return None


def open_reader(path):
    """Open a lazy reader over a single archive, an index file, or a shard dir."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint path does not exist: {path}")
    index = _find_index_file(path)
    if index is None:
        return ArchiveReader(path)
    return ShardedReader(index)


def load_checkpoint(path) -> Checkpoint:
    """Load a single-file archive, a shard index file, or a sharded directory."""
    with open_reader(path) as reader:
        return Checkpoint((reader.read(n) for n in reader.names()), reader.metadata)


def _encode_header(cp_names, dtypes, shapes, lengths, metadata) -> tuple[bytes, dict[str, int]]:
    header: dict = {}
    if metadata:
        header[_METADATA_KEY] = {k: metadata[k] for k in sorted(metadata)}
    offsets: dict[str, int] = {}
    cursor = 0
    for name in cp_names:
        header[name] = {
            "dtype": dtypes[name],
            "shape": list(shapes[name]),
            "data_offsets": [cursor, cursor + lengths[name]],
        }
        offsets[name] = cursor
        cursor += lengths[name]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return blob.encode("utf-8"), offsets


def save_checkpoint(cp: Checkpoint, path) -> None:
    """Write a single-file archive; identical Checkpoints produce identical bytes."""
    path = Path(path)
    names = cp.names()
    header, _ = _encode_header(
        names,
        {n: cp[n].dtype for n in names},
        {n: cp[n].shape for n in names},
        {n: cp[n].nbytes for n in names},
        cp.metadata,
    )
    tmp_fd, tmp_name = tempfile.mkstemp(dir=path.parent or Path("."), prefix=f".{path.name}.")
    try:
        with os.fdopen(tmp_fd, "wb") as fh:
            fh.write(len(header).to_bytes(8, "little"))
            fh.write(header)
            for name in names:
                fh.write(cp[name].data)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise
