import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import exhaustive_search, grid_search_scale, group_error
from ccq.coding import CONFIG_206, CONFIG_275, EncodingConfig, Family, build_codebook, decode_states
from ccq.errors import ConfigurationError, ShapeError
from ccq.quantizer import (
    QuantizerOptions,
    cluster_channel,
    group_layout,
    group_reconstruction,
    init_group_scale,
    naive_cluster_indices,
    optimize_scale,
    quantize_group,
    quantize_tensor,
    rtn_quantize,
    search_codes,
    search_codes_batch,
)

SEARCH_CONFIGS = [EncodingConfig(2, 3, 1), EncodingConfig(4, 3, 2), EncodingConfig(3, 3, 2),
                  EncodingConfig(3, 4, 2), EncodingConfig(6, 4, 3)]


def test_init_group_scale():
    assert init_group_scale([0, 0, 0, 0], 4) == 0
    assert init_group_scale([-7, 7], 4) == 1.0
    with pytest.raises(ShapeError):
        init_group_scale([], 4)


def test_gaussian_group_beats_rtn(rng):
    group = rng.standard_normal(64)
    codes, scale = quantize_group(group, Family.BPW275, rounds=0)
    ccq_err = ((group - group_reconstruction(codes, scale, Family.BPW275, 64)) ** 2).sum()
    rtn_err = ((group - rtn_quantize(group[None, :], 2, 64)[0]) ** 2).sum()
    assert init_group_scale(group, 4) > 0
    assert ccq_err < rtn_err


@pytest.mark.parametrize("cfg", SEARCH_CONFIGS, ids=str)
def test_search_recovers_representable_vector(cfg, rng):
    zp = 1 << (cfg.L - 1)
    for k in rng.integers(0, 1 << cfg.total_bits, size=20):
        v = (decode_states(int(k), cfg) - zp) * 0.37
        assert search_codes(v, 0.37, zp, cfg) == k


def test_search_zero_scale_ties_to_code_zero(rng):
    assert search_codes(rng.standard_normal(3), 0.0, 8, CONFIG_275) == 0


@pytest.mark.parametrize("cfg", SEARCH_CONFIGS, ids=str)
def test_search_matches_exhaustive_oracle(cfg, rng):
    rows = build_codebook(cfg).rows
    zp = 1 << (cfg.L - 1)
    v = rng.standard_normal((100, cfg.N))
    s = rng.uniform(0.05, 0.6, size=100)
    got = search_codes_batch(v, s, zp, cfg)
    want = [exhaustive_search(v[i], s[i], zp, rows) for i in range(100)]
    assert got.tolist() == want


_ROWS_275 = build_codebook(CONFIG_275).rows


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=3, max_size=3), st.floats(0.01, 2.0))
def test_search_is_optimal(v, s):
    k = search_codes(v, s, 8, CONFIG_275)
    errs = ((np.asarray(v)[None, :] - (_ROWS_275 - 8) * s) ** 2).sum(axis=1)
    assert errs[k] <= errs.min() * (1 + 1e-12) + 1e-15


def test_padding_positions_do_not_steer_search(rng):
    # a padded sub-vector [w, 0, 0] must pick the level nearest w alone
    zp, s = 8, 0.3
    for w in rng.uniform(-2.5, 2.5, size=50):
        code = search_codes_batch([[w, 0.0, 0.0]], [s], zp, CONFIG_275, [[1, 0, 0]])[0]
        state = decode_states(int(code), CONFIG_275)[0]
        best = np.argmin(np.abs(w - (np.arange(16) - zp) * s))
        assert state == best
        assert code & 0xF == 0


def test_optimize_scale_examples(rng):
    q = rng.integers(-8, 8, size=64)
    assert optimize_scale(2.5 * q, q) == pytest.approx(2.5, rel=1e-15)
    assert optimize_scale(rng.standard_normal(64), np.zeros(64), prior=0.7) == 0.7


def test_optimize_scale_matches_grid_search(rng):
    for _ in range(20):
        w = rng.standard_normal(64)
        # codes correlated with w, as they are after a search
        q = np.clip(np.round(w / 0.3 + rng.normal(0, 0.7, 64)), -8, 7)
        got = optimize_scale(w, q)
        assert got == pytest.approx(grid_search_scale(w, q), rel=1e-6)
        # derivative of the error vanishes at the fitted scale
        assert abs(2 * (q @ q) * got - 2 * (w @ q)) < 1e-9 * (abs(w @ q) + 1)


def test_quantize_group_zero():
    codes, scale = quantize_group(np.zeros(64), Family.BPW275)
    assert scale == 0.0
    assert not codes.any()
    assert not group_reconstruction(codes, scale, Family.BPW275, 64).any()


def _representable_states(layout, rng):
    """States of a valid group whose largest offset from zp is zp - 1."""
    zp = layout.zero_point
    while True:
        w = np.zeros(layout.group_size, dtype=np.int64)
        for seg in layout.segments:
            cfg = seg.config
            for pos in seg.positions:
                while True:
                    st_ = decode_states(int(rng.integers(0, 1 << cfg.total_bits)), cfg)
                    if st_.min() >= 1:
                        break
                w[pos[pos >= 0]] = st_[pos >= 0]
        if (w == 2 * zp - 1).any():
            return w


@pytest.mark.parametrize("family", list(Family))
def test_quantize_group_exactly_representable(family, rng):
    layout = group_layout(family, 64)
    group = (_representable_states(layout, rng) - layout.zero_point) * 0.25
    codes, scale = quantize_group(group, family)
    recon = group_reconstruction(codes, scale, family, 64)
    assert np.abs(recon - group).max() < 1e-6


@pytest.mark.parametrize("family", list(Family))
def test_refinement_does_not_increase_error(family, rng):
    for _ in range(10):
        group = rng.standard_normal(64)
        errs = []
        for rounds in (0, 1, 2, 4):
            codes, scale = quantize_group(group, family, rounds)
            errs.append(((group - group_reconstruction(codes, scale, family, 64)) ** 2).sum())
        assert all(b <= a * (1 + 1e-6) for a, b in zip(errs, errs[1:]))


def test_group_size_rules():
    with pytest.raises(ConfigurationError):
        group_layout(Family.BPW275, 65)
    with pytest.raises(ConfigurationError):
        group_layout(Family.BPW206, 65)
    assert group_layout(Family.BPW275, 64).n_units == 22
    assert group_layout(Family.BPW25, 64).n_units == 10
    assert group_layout(Family.BPW206, 64).n_units == 16
    assert not group_layout(Family.BPW275, 63).embedded_scale
    with pytest.raises(ConfigurationError):
        QuantizerOptions(family="2.75", refinement_rounds=-1)


def test_quantize_tensor_shape_error():
    with pytest.raises(ShapeError, match="not divisible"):
        quantize_tensor(np.zeros((4, 100)), family="2.75")


def test_quantize_tensor_zero_row():
    qt = quantize_tensor(np.zeros((1, 64)), family="2.75")
    assert not qt.codes.any() and not qt.q_scales.any()
    assert not qt.reconstruct().any()


@pytest.mark.parametrize("family", list(Family))
def test_identity_rows_improve_on_zeroing(family):
    # the lone 1.0 in each row cannot be isolated by the overlapping states,
    # so the bound checked is that every row beats the all-zero reconstruction
    w = np.eye(64, dtype=np.float32)
    qt = quantize_tensor(w, family=family)
    row_err = ((w - qt.reconstruct()) ** 2).sum(axis=1)
    assert (row_err < 1.0).all()


@pytest.mark.parametrize("family", list(Family))
def test_quantize_tensor_deterministic_and_row_independent(family, rng):
    w = rng.standard_normal((8, 128)).astype(np.float32)
    a = quantize_tensor(w, family=family)
    b = quantize_tensor(w, family=family)
    assert np.array_equal(a.codes, b.codes) and np.array_equal(a.q_scales, b.q_scales)
    part = quantize_tensor(w[3:5], family=family)
    assert np.array_equal(part.codes, a.codes[3 * 2:5 * 2])
    assert np.array_equal(part.reconstruct(), a.reconstruct()[3:5])


def test_group_errors_match_reconstruction(rng):
    w = rng.standard_normal((4, 128)).astype(np.float32)
    qt = quantize_tensor(w, family="2.5")
    diff = (w.astype(np.float64) - qt.reconstruct()).reshape(-1, 64)
    assert np.array_equal(qt.group_errors, (diff ** 2).sum(axis=1))


def test_cluster_identical_codes():
    params, q = cluster_channel([1234] * 10, 15)
    assert params.code_scale == 1.0 and params.code_zero_point == 1234
    assert not q.any()


def test_cluster_full_span():
    codes = np.array([0, 100, 32767])
    params, q = cluster_channel(codes, 15)
    assert params.code_zero_point == 0
    assert params.code_scale == np.float32(32767 / 255)
    assert q.tolist()[0] == 0 and q.tolist()[-1] == 255
    assert params.reconstruct(255) == 32767


def test_cluster_aware_search_dominates_rounding(rng):
    cfg = CONFIG_206
    zp = 32
    vec = rng.standard_normal((128, 4))
    scales = np.repeat(rng.uniform(0.05, 0.1, size=8), 16)
    codes = search_codes_batch(vec, scales, zp, cfg)
    params, q = cluster_channel(codes, 15, subvectors=vec, scales=scales, zp=zp)
    aware = params.reconstruct(q)
    naive = params.reconstruct(naive_cluster_indices(codes, params))
    for v, s, a, n in zip(vec, scales, aware, naive):
        ea = group_error(v, decode_states(int(a), cfg) - zp, s)
        en = group_error(v, decode_states(int(n), cfg) - zp, s)
        assert ea <= en + 1e-12


def test_rtn_examples():
    assert np.array_equal(rtn_quantize(np.array([[-3.0, -1.0, 1.0, 3.0]]), 2, 4),
                          np.array([[-3.0, -1.0, 1.0, 3.0]], dtype=np.float32))
    w = (np.tile(np.arange(16), 4) - 7.5)[None, :].astype(np.float32)
    assert np.abs(rtn_quantize(w, 4, 64) - w).max() < 1e-6
    assert not rtn_quantize(np.zeros((2, 64)), 2, 64).any()
    with pytest.raises(ConfigurationError):
        rtn_quantize(np.zeros((1, 64)), 3, 64)
    with pytest.raises(ShapeError):
        rtn_quantize(np.zeros((1, 60)), 2, 64)


def test_clustered_codes_stay_in_range(gaussian_512):
    qt = quantize_tensor(gaussian_512[:32], family="2.06")
    assert qt.codes.max() < 1 << CONFIG_206.total_bits
    assert qt.clustered_codes.dtype == np.uint8
