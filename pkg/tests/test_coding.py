import numpy as np
import pytest
from hypothesis import given, strategies as st

from ccq.coding import (
    CONFIG_206,
    CONFIG_275,
    HYBRID_25,
    EncodingConfig,
    Family,
    HybridSchedule,
    build_codebook,
    decode_states,
    family_encoding,
    layout_for,
    states_to_code,
    total_bits,
)
from ccq.errors import CodeDomainError, ConfigurationError, TransitionError

CONFIGS = [EncodingConfig(2, 3, 1), EncodingConfig(4, 3, 2), EncodingConfig(3, 3, 2),
           EncodingConfig(3, 4, 2), EncodingConfig(6, 4, 3)]


@pytest.mark.parametrize("cfg,bits", [((2, 3, 1), 4), ((4, 3, 2), 8), ((6, 1, 3), 6),
                                      ((3, 3, 2), 7), ((3, 4, 2), 9), ((6, 4, 3), 15)])
def test_total_bits(cfg, bits):
    c = EncodingConfig(*cfg)
    assert total_bits(c) == bits == c.total_bits


@pytest.mark.parametrize("cfg", [(0, 3, 1), (4, 3, 5), (9, 1, 1), (4, 0, 2), (8, 3, 5)])
def test_invalid_configs_rejected(cfg):
    with pytest.raises(ConfigurationError):
        EncodingConfig(*cfg)


def test_codebook_two_one_example_rows():
    cb = build_codebook(EncodingConfig(2, 3, 1))
    assert cb.rows.shape == (16, 3)
    assert cb.rows[2].tolist() == [0b00, 0b01, 0b10]
    # 1111 is 11 -> 11 -> 11
    assert cb.rows[15].tolist() == [3, 3, 3]
    assert cb.rows[0b1001].tolist() == [0b10, 0b00, 0b01]


def test_codebook_single_state_is_identity():
    cb = build_codebook(EncodingConfig(4, 1, 2))
    assert cb.rows[:, 0].tolist() == list(range(16))


@pytest.mark.parametrize("cfg", CONFIGS, ids=str)
def test_decode_matches_codebook_exhaustively(cfg):
    cb = build_codebook(cfg)
    codes = np.arange(1 << cfg.total_bits)
    assert np.array_equal(decode_states(codes, cfg), cb.rows)


@pytest.mark.parametrize("cfg", CONFIGS, ids=str)
def test_adjacent_states_share_overlap_bits(cfg):
    rows = build_codebook(cfg).rows
    overlap = cfg.L - cfg.S
    keep = (1 << overlap) - 1
    for j in range(cfg.N - 1):
        assert np.array_equal(rows[:, j] & keep, rows[:, j + 1] >> cfg.S)


def test_decode_examples():
    assert decode_states(0xFF, CONFIG_275).tolist() == [15, 15, 15]
    assert decode_states(2, EncodingConfig(2, 3, 1)).tolist() == [0, 1, 2]


def test_decode_out_of_range():
    with pytest.raises(CodeDomainError):
        decode_states(256, CONFIG_275)
    with pytest.raises(CodeDomainError):
        decode_states(-1, CONFIG_275)


def test_states_to_code_examples():
    assert states_to_code([0, 1, 2], EncodingConfig(2, 3, 1)) == 2
    assert states_to_code([5], EncodingConfig(4, 1, 2)) == 5
    with pytest.raises(TransitionError, match="not a valid transition"):
        states_to_code([0, 3, 0], EncodingConfig(2, 3, 1))


@pytest.mark.parametrize("cfg", CONFIGS, ids=str)
def test_round_trip_all_codes(cfg):
    codes = range(1 << cfg.total_bits)
    step = max(1, (1 << cfg.total_bits) // 2048)
    for k in list(codes)[::step]:
        assert states_to_code(decode_states(k, cfg), cfg) == k


@given(st.integers(0, (1 << 15) - 1))
def test_round_trip_property_643(k):
    assert states_to_code(decode_states(k, CONFIG_206), CONFIG_206) == k


def test_layouts_match_table():
    a = layout_for(CONFIG_275)
    assert (a.weight_shifts, a.weight_mask, a.scale_mask, a.uses_cluster) == ((4, 2, 0), 0xF, 0xF, False)
    b = layout_for(HYBRID_25)
    assert (b.weight_shifts, b.weight_mask, b.scale_mask) == ((13, 11, 9, 6, 4, 2, 0), 0x7, 0x1FFF)
    c = layout_for(CONFIG_206)
    assert (c.weight_shifts, c.weight_mask, c.scale_mask, c.uses_cluster) == ((9, 6, 3, 0), 0x3F, 0xF, True)
    assert layout_for("2.06") == c


def test_layout_unsupported():
    with pytest.raises(ConfigurationError):
        layout_for(EncodingConfig(2, 3, 1))


@pytest.mark.parametrize("family", list(Family))
def test_fields_cover_word(family):
    lay = layout_for(family)
    L = lay.weight_mask.bit_length()
    covered = 0
    for sh in lay.weight_shifts:
        covered |= lay.weight_mask << sh
    enc = family_encoding(family)
    parts = getattr(enc, "parts", (enc,))
    used = sum(p.total_bits for p in parts)
    assert covered == (1 << used) - 1
    # overlap between neighbouring windows is exactly the shared L - S bits
    shared = sum((p.N - 1) * (p.L - p.S) for p in parts)
    assert L * len(lay.weight_shifts) - used == shared


def test_hybrid_schedule_invariants():
    assert HYBRID_25.states_per_word == 7
    with pytest.raises(ConfigurationError):
        HybridSchedule((EncodingConfig(3, 3, 2), EncodingConfig(4, 3, 2)), 16)
    with pytest.raises(ConfigurationError):
        HybridSchedule((EncodingConfig(3, 3, 2),), 16)


def test_family_parse():
    assert Family.parse("2.75") is Family.BPW275
    assert Family.parse("bpw206") is Family.BPW206
    with pytest.raises(ConfigurationError):
        Family.parse("3.0")
