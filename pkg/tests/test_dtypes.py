import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modelmerge.checkpoint import TensorRecord, to_bf16, to_f32
from modelmerge.dtypes import (
    bf16_bits_to_f32,
    decode_to_f32,
    encode_from_f32,
    f32_to_bf16_bits,
)
from modelmerge.errors import DtypeError


def bf16_bits(*values):
    return np.array(values, dtype=np.uint16)


def f32_bits(*values):
    return np.array(values, dtype=np.uint32).view(np.float32)


class TestWiden:
    def test_one(self):
        assert bf16_bits_to_f32(bf16_bits(0x3F80))[0] == np.float32(1.0)

    def test_zero(self):
        widened = bf16_bits_to_f32(bf16_bits(0x0000))
        assert widened[0] == 0.0
        assert widened.view(np.uint32)[0] == 0

    def test_widening_is_bit_shift(self):
        bits = bf16_bits(0x3F80, 0xC0A0, 0x0001, 0x8000, 0x7F80)
        assert np.array_equal(
            bf16_bits_to_f32(bits).view(np.uint32),
            bits.astype(np.uint32) << 16,
        )

    def test_f16_exact(self):
        raw = np.array([1.0, -2.5, 6.104e-05], dtype=np.float16).tobytes()
        out = decode_to_f32(raw, "F16")
        assert np.array_equal(out, np.array([1.0, -2.5, 6.104e-05],
                                            dtype=np.float16).astype(np.float32))


def scalar_rtne_bf16(u: int) -> int:
    # Independent integer model of round-to-nearest-even on the upper 16 bits.
    if (u & 0x7F800000) == 0x7F800000 and (u & 0x007FFFFF):
        r = u >> 16
        return r | 0x40 if (r & 0x7F) == 0 else r
    lower = u & 0xFFFF
    upper = u >> 16
    if lower > 0x8000 or (lower == 0x8000 and (upper & 1)):
        upper += 1
    return upper & 0xFFFF


class TestNarrow:
    def test_one(self):
        assert f32_to_bf16_bits(np.array([1.0], dtype=np.float32))[0] == 0x3F80

    def test_inf(self):
        out = f32_to_bf16_bits(np.array([np.inf, -np.inf], dtype=np.float32))
        assert list(out) == [0x7F80, 0xFF80]

    def test_nan_stays_nan_and_quiet_when_payload_vanishes(self):
        # payload entirely in the truncated bits: must not collapse to Inf
        val = f32_bits(0x7F800001)
        assert f32_to_bf16_bits(val)[0] == 0x7FC0

    def test_signed_zero(self):
        out = f32_to_bf16_bits(f32_bits(0x80000000, 0x00000000))
        assert list(out) == [0x8000, 0x0000]

    @pytest.mark.parametrize("exp", [1, 60, 127, 128, 200, 254])
    @pytest.mark.parametrize("mant7", [0, 1, 2, 0x7E, 0x7F])
    def test_constructed_ties_round_to_even(self, exp, mant7):
        # exactly midway between two BF16 neighbors: lower 16 bits == 0x8000
        u = (exp << 23) | (mant7 << 16) | 0x8000
        got = f32_to_bf16_bits(f32_bits(u))[0]
        assert got == scalar_rtne_bf16(u)
        assert got & 1 == 0 or got == scalar_rtne_bf16(u)  # ties landed even

    def test_subnormal_ties(self):
        for u in (0x00008000, 0x00018000, 0x00028000):
            assert f32_to_bf16_bits(f32_bits(u))[0] == scalar_rtne_bf16(u)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 2**32 - 1), min_size=1, max_size=64))
    def test_matches_scalar_model(self, raw):
        values = f32_bits(*raw)
        got = f32_to_bf16_bits(values)
        want = [scalar_rtne_bf16(u) for u in raw]
        assert list(got) == want


class TestRoundtrip:
    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 2**16 - 1), min_size=1, max_size=128))
    def test_narrow_after_widen_is_identity(self, raw):
        bits = bf16_bits(*raw)
        assert np.array_equal(f32_to_bf16_bits(bf16_bits_to_f32(bits)), bits)

    def test_seeded_bulk(self):
        rng = np.random.default_rng(42)
        bits = rng.integers(0, 2**16, size=100_000, dtype=np.uint16)
        assert np.array_equal(f32_to_bf16_bits(bf16_bits_to_f32(bits)), bits)


class TestRecordConversion:
    def test_to_f32_widens_bf16(self):
        rec = TensorRecord("t", "BF16", (2,), bf16_bits(0x3F80, 0xBF80).tobytes())
        wide = to_f32(rec)
        assert wide.dtype == "F32"
        assert list(wide.to_f32_array()) == [1.0, -1.0]

    def test_to_f32_passthrough(self):
        rec = TensorRecord("t", "F32", (1,), np.float32([2.5]).tobytes())
        assert to_f32(rec) is rec

    def test_to_bf16_requires_f32(self):
        rec = TensorRecord("t", "BF16", (1,), b"\x80\x3f")
        with pytest.raises(DtypeError):
            to_bf16(rec)

    def test_roundtrip_record(self):
        rng = np.random.default_rng(3)
        bits = rng.integers(0, 2**16, size=256, dtype=np.uint16)
        rec = TensorRecord("t", "BF16", (256,), bits.astype("<u2").tobytes())
        assert to_bf16(to_f32(rec)).data == rec.data

    def test_unknown_dtype_rejected(self):
        with pytest.raises(DtypeError):
            encode_from_f32(np.zeros(2, dtype=np.float32), "I8")
        with pytest.raises(DtypeError):
            decode_to_f32(b"", "F64")
