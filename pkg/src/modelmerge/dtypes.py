"""Element types and lossless BF16/F16/F32 conversion.

All merge arithmetic runs on float32 workspaces; narrow storage types are
widened exactly on the way in and rounded (round-to-nearest-even) on the
way out.
"""

from __future__ import annotations

import numpy as np

from .errors import DtypeError

BF16 = "BF16"
F16 = "F16"
F32 = "F32"

SUPPORTED_DTYPES = (BF16, F16, F32)

ITEMSIZE = {BF16: 2, F16: 2, F32: 4}

_EXP_MASK32 = np.uint32(0x7F800000)
_MAN_MASK32 = np.uint32(0x007FFFFF)


def validate_dtype(dtype: str) -> str:
    if dtype not in SUPPORTED_DTYPES:
        raise DtypeError(f"unsupported dtype tag {dtype!r}; expected one of {SUPPORTED_DTYPES}")
    return dtype


def bf16_bits_to_f32(bits: np.ndarray) -> np.ndarray:
    """Widen BF16 bit patterns (uint16) to float32. Exact for every input."""
    bits = np.ascontiguousarray(bits, dtype=np.uint16)
    return (bits.astype(np.uint32) << np.uint32(16)).view(np.float32)


def f32_to_bf16_bits(values: np.ndarray) -> np.ndarray:
    """Round float32 down to BF16 bit patterns (uint16).

    Round-to-nearest-even on the upper 16 bits. NaNs keep their upper
    payload bits; the quiet bit is forced only when truncation would
    otherwise yield an Inf pattern, so widen-then-narrow is the identity
    on every BF16 input.
    """
    u = np.ascontiguousarray(values, dtype=np.float32).view(np.uint32)
    is_nan = ((u & _EXP_MASK32) == _EXP_MASK32) & ((u & _MAN_MASK32) != np.uint32(0))
    rounded = ((u + np.uint32(0x7FFF) + ((u >> np.uint32(16)) & np.uint32(1)))
               >> np.uint32(16)).astype(np.uint16)
    trunc = (u >> np.uint32(16)).astype(np.uint16)
    trunc = np.where((trunc & np.uint16(0x7F)) == np.uint16(0),
                     trunc | np.uint16(0x40), trunc)
    return np.where(is_nan, trunc, rounded)


def decode_to_f32(data: bytes, dtype: str) -> np.ndarray:
    """Decode a raw little-endian buffer of the given dtype to a flat float32 array."""
    validate_dtype(dtype)
    if dtype == F32:
        return np.frombuffer(data, dtype="<f4").astype(np.float32, copy=True)
    if dtype == F16:
        return np.frombuffer(data, dtype="<f2").astype(np.float32)
    return bf16_bits_to_f32(np.frombuffer(data, dtype="<u2"))


def encode_from_f32(values: np.ndarray, dtype: str) -> bytes:
    """Encode a float32 array as a raw little-endian buffer of the given dtype."""
    validate_dtype(dtype)
    flat = np.ascontiguousarray(values, dtype=np.float32).reshape(-1)
    if dtype == F32:
        return flat.astype("<f4").tobytes()
    if dtype == F16:
        return flat.astype("<f2").tobytes()
    return f32_to_bf16_bits(flat).astype("<u2").tobytes()
