import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from emfisim.errors import InvalidQuant, InvalidReal, OutOfBounds
from emfisim.formats import (FormatKind, FpClass, QuantParams, classify_fp_array, decode_fp,
                             decode_fp_array, dequantize, dequantize_array, encode_fp,
                             encode_fp_array, pack_int4, quantize, quantize_array, split_fp,
                             symmetric_scales, unpack_int4)
from emfisim.store import TensorMeta, WeightStore, decode_tensor

import oracles

FP32, FP16, INT8, INT4 = FormatKind.FP32, FormatKind.FP16, FormatKind.INT8, FormatKind.INT4


def q8(scale, zero=0):
    return QuantParams(0, (scale,), (zero,), -128, 127)


def q4(scale, zero=0):
    return QuantParams(0, (scale,), (zero,), -8, 7)


# -- scalar codec examples ------------------------------------------------------

def test_decode_one():
    v, parts = decode_fp(0x3F800000, FP32)
    assert v == 1.0 and parts.cls is FpClass.NORMAL
    assert (parts.sign, parts.biased_exponent, parts.mantissa) == (0, 127, 0)


def test_decode_quiet_nan():
    v, parts = decode_fp(0x7FC00000, FP32)
    assert math.isnan(v) and parts.cls is FpClass.NAN


def test_decode_fe_word_matches_reference():
    v, parts = decode_fp(0xFEFEFEFE, FP32)
    assert v == oracles.fp32_value(0xFEFEFEFE)
    assert v == pytest.approx(-1.6947395e38, rel=1e-7)
    assert parts.cls is FpClass.NORMAL and parts.sign == 1


def test_decode_fp16_one():
    assert decode_fp(0x3C00, FP16)[0] == 1.0


def test_encode_examples():
    assert encode_fp(1.0, FP16) == 0x3C00
    assert encode_fp(-0.0, FP32) == 0x80000000
    assert encode_fp(7.0e4, FP16) == 0x7C00


def test_encode_rounds_half_even():
    # 1 + 2**-11 is exactly halfway between two FP16 values; the even one wins
    assert encode_fp(1 + 2**-11, FP16) == 0x3C00
    assert encode_fp(1 + 3 * 2**-11, FP16) == 0x3C02
    assert encode_fp(65520.0, FP16) == 0x7C00  # halfway to the next binade rounds to inf
    assert encode_fp(65519.99, FP16) == 0x7BFF


def test_encode_subnormals():
    assert encode_fp(2.0**-24, FP16) == 0x0001
    assert encode_fp(2.0**-25, FP16) == 0x0000  # tie to even zero
    assert encode_fp(3 * 2.0**-26, FP16) == 0x0001
    assert encode_fp(2.0**-149, FP32) == 0x00000001
    assert split_fp(0x0001, FP16).cls is FpClass.SUBNORMAL


def test_encode_nan_is_quiet():
    assert split_fp(encode_fp(float("nan"), FP32), FP32).cls is FpClass.NAN
    assert split_fp(encode_fp(float("nan"), FP16), FP16).cls is FpClass.NAN


def test_split_rejects_wide_pattern():
    with pytest.raises(OutOfBounds):
        split_fp(1 << 16, FP16)


# -- exhaustive FP16 / sampled FP32 -----------------------------------------------

_CLS = np.array(oracles.CLASS_NAMES, dtype=object)


def test_fp16_exhaustive_classes_and_values():
    bits = np.arange(1 << 16, dtype=np.uint16)
    ref = bits.view(np.float16).astype(np.float32)
    got = decode_fp_array(bits, FP16)
    same = (got.view(np.uint32) == ref.view(np.uint32)) | (np.isnan(got) & np.isnan(ref))
    assert same.all()
    assert (_CLS[classify_fp_array(bits, FP16)] == oracles.fp_class_array(bits, np.float16)).all()


def test_fp16_exhaustive_scalar_round_trip():
    for b in range(1 << 16):
        v, parts = decode_fp(b, FP16)
        back = encode_fp(v, FP16)
        if parts.cls is FpClass.NAN:
            assert split_fp(back, FP16).cls is FpClass.NAN
        else:
            assert back == b


def test_fp32_sampled_round_trip():
    bits = np.random.default_rng(7).integers(0, 1 << 32, 200_000, dtype=np.uint64).astype(np.uint32)
    vals = decode_fp_array(bits, FP32)
    assert (vals.view(np.uint32)[~np.isnan(vals)] == bits[~np.isnan(vals)]).all()
    assert (_CLS[classify_fp_array(bits, FP32)] == oracles.fp_class_array(bits, np.float32)).all()
    back = encode_fp_array(vals, FP32)
    nan = np.isnan(vals)
    assert (back[~nan] == bits[~nan]).all()
    assert (classify_fp_array(back[nan], FP32) == FpClass.NAN).all()


@given(st.integers(0, (1 << 32) - 1))
def test_fp32_scalar_matches_struct(b):
    v, parts = decode_fp(b, FP32)
    ref = oracles.fp32_value(b)
    assert oracles.fp_class(ref, float(np.finfo(np.float32).tiny)) == oracles.CLASS_NAMES[parts.cls]
    if not math.isnan(ref):
        assert v == ref and math.copysign(1, v) == math.copysign(1, ref)
        assert encode_fp(v, FP32) == b


@given(st.floats(allow_nan=False, width=64))
def test_encode_matches_numpy_cast(x):
    assert encode_fp(x, FP32) == int(np.float32(x).view(np.uint32))
    assert encode_fp(x, FP16) == int(np.array(x).astype(np.float16).view(np.uint16))


def test_encode_array_matches_numpy_cast():
    x = np.random.default_rng(3).standard_normal(100_000) * np.exp2(
        np.random.default_rng(4).integers(-40, 40, 100_000))
    assert (encode_fp_array(x, FP32) == x.astype(np.float32).view(np.uint32)).all()
    assert (encode_fp_array(x, FP16) == x.astype(np.float16).view(np.uint16)).all()


# -- quantization -------------------------------------------------------------------

def test_quantize_examples():
    assert quantize(0.5, q8(0.125)) == 4
    assert quantize(100.0, q8(0.125)) == 127
    assert quantize(-1.0625, q4(0.125)) == -8
    assert oracles.quantize_exact(-1.0625, 0.125, 0, -8, 7) == -8


def test_quantize_rejects_non_finite():
    with pytest.raises(InvalidReal):
        quantize(float("inf"), q8(0.1))
    with pytest.raises(InvalidReal):
        quantize_array(np.array([np.nan]), q8(0.1))


def test_dequantize_examples():
    assert dequantize(4, q8(0.125)) == 0.5
    assert dequantize(-128, q8(0.01)) == pytest.approx(-1.28)
    assert dequantize(127, q8(0.0082)) == pytest.approx(1.0414, abs=1e-12)
    assert dequantize(127, q8(0.0082)) == 127 * 0.0082
    with pytest.raises(InvalidQuant):
        dequantize(8, q4(1.0))


def test_quant_params_validation():
    with pytest.raises(InvalidQuant):
        QuantParams(0, (0.0,), (0,), -128, 127)
    with pytest.raises(InvalidQuant):
        QuantParams(0, (1.0, 2.0), (0,), -128, 127)


def test_symmetric_scales_floor_for_zero_channel():
    s = symmetric_scales(np.array([[0.0, 0.0], [-1.0, 0.5]]), INT8)
    assert s == (2.0**-24, 1.0 / 127)


scale_st = st.floats(1e-6, 10.0, allow_nan=False)


@given(st.floats(-1e6, 1e6), scale_st, st.sampled_from([INT8, INT4]))
def test_quantize_matches_exact_oracle(r, s, kind):
    lo, hi = kind.q_range
    p = QuantParams(0, (s,), (0,), lo, hi)
    assert quantize(r, p) == oracles.quantize_exact(r, s, 0, lo, hi)
    assert quantize_array(np.array([r]), p)[0] == quantize(r, p)


@given(st.floats(-1.0, 1.0), scale_st, st.sampled_from([INT8, INT4]))
def test_quantization_error_bound(frac, s, kind):
    lo, hi = kind.q_range
    p = QuantParams(0, (s,), (0,), lo, hi)
    r = frac * s * hi
    err = abs(dequantize(quantize(r, p), p) - r)
    assert err <= s / 2 * (1 + 1e-12)


@given(st.binary(min_size=1, max_size=64), scale_st, st.integers(-4, 4), st.sampled_from([INT8, INT4]))
def test_integer_bounding_any_bytes(data, s, z, kind):
    lo, hi = kind.q_range
    p = QuantParams(0, (s,), (z,), lo, hi)
    if kind is INT8:
        q = np.frombuffer(data, dtype=np.int8).astype(np.int64)
    else:
        q = unpack_int4(data, 2 * len(data))
    w = dequantize_array(q, p)
    assert (w >= s * (lo - z)).all() and (w <= s * (hi - z)).all()


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=32), st.sampled_from([INT8, INT4]))
def test_requantization_is_idempotent(values, kind):
    w = np.array(values)
    p = QuantParams.symmetric(kind, symmetric_scales(w[None], kind))
    q = quantize_array(w[None], p)
    assert (quantize_array(dequantize_array(q, p), p) == q).all()


# -- INT4 packing ------------------------------------------------------------------

def test_pack_examples():
    assert pack_int4([0, 0]) == b"\x00"
    assert pack_int4([-8, 7]) == b"\x78"
    assert pack_int4([1, -1, 2]) == b"\xf1\x02"


def test_unpack_examples():
    assert unpack_int4(b"\x78", 2).tolist() == [-8, 7]
    assert unpack_int4(b"\xfe", 2).tolist() == [-2, -1] == oracles.unpack_nibbles(b"\xfe", 2)
    assert unpack_int4(b"\x00", 1).tolist() == [0]
    with pytest.raises(OutOfBounds):
        unpack_int4(b"\x00", 3)


def test_pack_rejects_out_of_range():
    with pytest.raises(InvalidQuant):
        pack_int4([8])


@given(st.lists(st.integers(-8, 7), max_size=100))
def test_pack_unpack_inverse(values):
    data = pack_int4(values)
    assert len(data) == -(-len(values) // 2)
    assert unpack_int4(data, len(values)).tolist() == values


@given(st.binary(max_size=64))
def test_unpack_matches_oracle(data):
    assert unpack_int4(data, 2 * len(data)).tolist() == oracles.unpack_nibbles(data, 2 * len(data))


# -- decode_tensor examples -----------------------------------------------------------

def _one(blob, kind, n, quant=None):
    return WeightStore(blob, (TensorMeta("t", (n,), kind, 0, len(blob), quant),))


def test_decode_tensor_examples():
    assert decode_tensor(_one(b"\x00\x00\x80\x3f", FP32, 1), "t").tolist() == [1.0]
    assert decode_tensor(_one(b"\x81", INT8, 1, q8(0.01)), "t")[0] == pytest.approx(-1.27)
    assert decode_tensor(_one(b"\x7f", INT8, 1, q8(0.01)), "t")[0] == pytest.approx(1.27)
    got = decode_tensor(_one(b"\x78", INT4, 2, q4(0.5)), "t").tolist()
    assert got == [-4.0, 3.5]
    assert got == [q * 0.5 for q in oracles.unpack_nibbles(b"\x78", 2)]
