import numpy as np
import pytest
from hypothesis import given, strategies as st

from emfisim.analytics import bit_error_rate, feff_fraction
from emfisim.errors import LengthMismatch, OutOfBounds
from emfisim.faults import (MiB, EmfiPatternParams, FaultMask, FaultModel, FaultOp, FaultRecord,
                            apply_mask, diff_to_mask, gen_byte_set, gen_emfi_pattern,
                            gen_random_bitflips)
from emfisim.synth import uniform_bytes

import oracles


# -- records and masks ---------------------------------------------------------------

def test_xor_zero_record_rejected():
    with pytest.raises(ValueError):
        FaultRecord(0, FaultOp.XOR, 0)


def test_mask_offsets_must_increase():
    with pytest.raises(ValueError):
        FaultMask([3, 1], [1, 1], [0xFE, 0xFE], 8)
    with pytest.raises(OutOfBounds):
        FaultMask([8], [1], [0xFE], 8)


@given(st.lists(st.tuples(st.integers(0, 99), st.sampled_from([FaultOp.XOR, FaultOp.SET]),
                          st.integers(1, 255)), unique_by=lambda t: t[0]))
def test_mask_serialization_round_trips(recs):
    recs = sorted(recs)
    m = FaultMask.from_records([FaultRecord(*r) for r in recs], 100)
    assert FaultMask.from_json(m.to_json()) == m
    assert FaultMask.from_binary(m.to_binary(), 100) == m
    assert len(m.to_binary()) == 6 * len(recs)


def test_mask_json_layout():
    m = FaultMask.from_records([FaultRecord(2, FaultOp.SET, 0xFE)], 4)
    assert m.to_json() == {"target_len": 4, "records": [{"offset": 2, "op": "set", "value": 254}]}
    assert m.to_binary() == b"\x02\x00\x00\x00\x01\xfe"


# -- apply / diff ------------------------------------------------------------------------

def test_apply_examples():
    blob = bytes(range(16))
    assert apply_mask(blob, FaultMask.empty(16)) == blob
    assert apply_mask(b"\x00", FaultMask.from_records([FaultRecord(0, FaultOp.SET, 0xFE)], 1)) == b"\xfe"
    x = FaultMask.from_records([FaultRecord(0, FaultOp.XOR, 0xFF)], 1)
    assert apply_mask(apply_mask(b"\x5a", x), x) == b"\x5a"


def test_apply_at_offset_and_bounds():
    m = FaultMask.from_records([FaultRecord(0, FaultOp.SET, 0xFF)], 2)
    assert apply_mask(b"\x00" * 4, m, 2) == b"\x00\x00\xff\x00"
    with pytest.raises(OutOfBounds):
        apply_mask(b"\x00" * 4, m, 3)


def test_diff_examples():
    assert len(diff_to_mask(b"abc", b"abc")) == 0
    (r,) = diff_to_mask(b"\x00", b"\xfe").records
    assert (r.op, r.value) == (FaultOp.XOR, 0xFE)
    with pytest.raises(LengthMismatch):
        diff_to_mask(b"a", b"ab")


@given(st.integers(0, 64).flatmap(lambda n: st.tuples(st.binary(min_size=n, max_size=n),
                                                      st.binary(min_size=n, max_size=n))))
def test_apply_diff_identity(pair):
    b, c = pair
    assert apply_mask(b, diff_to_mask(b, c), 0) == c


# -- generators -----------------------------------------------------------------------------

def test_bitflips_zero_rate_is_empty():
    assert len(gen_random_bitflips(1000, 0.0, 5)) == 0


def test_bitflip_rate_concentrates():
    n = 1 << 20
    m = gen_random_bitflips(n, 0.06, 21)
    blob = bytes(n)
    assert abs(bit_error_rate(blob, apply_mask(blob, m)) - 0.06) <= 0.002
    assert m == gen_random_bitflips(n, 0.06, 21)


def test_bitflips_flip_independent_of_content():
    m = gen_random_bitflips(4096, 0.1, 3)
    a, b = bytes(4096), uniform_bytes(4096, 8)
    assert oracles.popcount_diff(a, apply_mask(a, m)) == oracles.popcount_diff(b, apply_mask(b, m))


def test_byte_set_examples():
    m = gen_byte_set(100, 0.5, 0xFF, 1)
    assert len(m) == 50 and (m.ops == FaultOp.SET).all()
    assert apply_mask(bytes(8), gen_byte_set(8, 1.0, 0xFE, 1)) == b"\xfe" * 8
    n = 10**6
    out = apply_mask(bytes(n), gen_byte_set(n, 0.071, 0xFF, 21))
    assert feff_fraction(out) == pytest.approx(0.071, abs=1e-12)


@given(st.integers(1, 500), st.floats(0, 1), st.integers(0, 2**31))
def test_byte_set_count_is_floor(n, frac, seed):
    import math
    assert len(gen_byte_set(n, frac, 0xFF, seed)) == math.floor(frac * n)


# -- EMFI pattern -------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def default_mask():
    return gen_emfi_pattern(EmfiPatternParams())


def test_emfi_rates(default_mask):
    assert abs(default_mask.corrupted_fraction(0, 2 * MiB) - 0.15) <= 0.02
    assert default_mask.corrupted_fraction(2 * MiB, 4 * MiB) <= 0.02


def test_emfi_deterministic(default_mask):
    again = gen_emfi_pattern(EmfiPatternParams())
    assert again == default_mask
    assert again.to_binary() == default_mask.to_binary()
    assert gen_emfi_pattern(EmfiPatternParams(seed=22)) != default_mask


def test_emfi_values_follow_row_structure(default_mask):
    v = default_mask.values
    assert set(np.unique(v).tolist()) <= {0x00, 0x3C, 0xFE, 0xFF}
    alt = (v == 0x00) | (v == 0x3C)
    # alternating rows write 0x00 on even offsets and 0x3C on odd ones
    assert ((default_mask.offsets[alt] % 2 == 0) == (v[alt] == 0x00)).all()
    fe = ~alt
    assert 0.25 < np.mean(v[fe] == 0xFF) < 0.35


def test_emfi_rows_are_contiguous_runs(default_mask):
    p = EmfiPatternParams()
    starts = np.flatnonzero(np.diff(default_mask.offsets, prepend=-2) != 1)
    runs = np.diff(np.append(starts, default_mask.offsets.size))
    assert runs.min() >= p.row_len and (runs % p.row_len == 0).all()


def test_emfi_rate_law_of_large_numbers():
    for rate in (0.05, 0.2):
        m = gen_emfi_pattern(EmfiPatternParams(target_rate=rate, post_boundary_rate=rate, seed=4))
        assert abs(m.corrupted_fraction() - rate) < 0.01


def test_scaled_params_keep_boundary_ratio():
    p = EmfiPatternParams().scaled_to(4096, seed=3)
    assert (p.window_len, p.boundary_offset, p.seed) == (4096, 2048, 3)


def test_params_validation():
    with pytest.raises(ValueError):
        EmfiPatternParams(target_rate=1.5)
    with pytest.raises(ValueError):
        EmfiPatternParams(row_len=80)


def test_fault_model_round_trip():
    fm = FaultModel("bitflip", {"ber": 0.01})
    assert FaultModel.from_json(fm.to_json()) == fm
    assert len(FaultModel("none").make(100, 1)) == 0
    with pytest.raises(ValueError):
        FaultModel("laser")
