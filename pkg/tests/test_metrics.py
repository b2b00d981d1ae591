import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ccq.container import from_tensor
from ccq.errors import ShapeError
from ccq.kernels import dequantize_tensor
from ccq.metrics import compression_summary, error_report
from ccq.quantizer import quantize_tensor


def test_identical_inputs(rng):
    w = rng.standard_normal((4, 64))
    r = error_report(w, w, 64)
    assert (r.mse, r.max_abs, r.rel_frobenius) == (0.0, 0.0, 0.0)
    assert not r.per_group_error.any()


def test_negation_gives_two(rng):
    w = rng.standard_normal((4, 64))
    assert error_report(w, -w).rel_frobenius == pytest.approx(2.0, rel=1e-15)


def test_zero_matrix_relative_error_defined():
    assert error_report(np.zeros((2, 64)), np.zeros((2, 64))).rel_frobenius == 0.0


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        error_report(np.zeros((2, 64)), np.zeros((2, 32)))


def test_per_group_matches_quantizer(rng):
    w = rng.standard_normal((8, 256)).astype(np.float32)
    qt = quantize_tensor(w, family="2.06")
    r = error_report(w, dequantize_tensor(from_tensor(qt)), 64)
    assert np.array_equal(r.per_group_error, qt.group_errors)
    assert r.per_group_error.sum() == pytest.approx(r.mse * w.size, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 8), elements=st.floats(-10, 10)),
       arrays(np.float64, (3, 8), elements=st.floats(-10, 10)),
       st.floats(0.1, 10))
def test_scaling_and_permutation(a, b, c):
    base = error_report(a, b, 4)
    scaled = error_report(c * a, c * b, 4)
    assert scaled.mse == pytest.approx(c * c * base.mse, rel=1e-9, abs=1e-300)
    if np.linalg.norm(a) > 1e-6:
        assert scaled.rel_frobenius == pytest.approx(base.rel_frobenius, rel=1e-9)
    perm = np.random.default_rng(0).permutation(a.size)
    shuffled = error_report(a.reshape(-1)[perm], b.reshape(-1)[perm])
    assert shuffled.mse == pytest.approx(base.mse, rel=1e-12, abs=1e-300)
    assert shuffled.max_abs == base.max_abs


@pytest.mark.parametrize("family,bpw", [("2.06", 2.0625), ("2.75", 2.75), ("2.5", 2.5)])
def test_compression_ratio(family, bpw, rng):
    w = rng.standard_normal((32, 512)).astype(np.float32)
    s = compression_summary(from_tensor(quantize_tensor(w, family=family)))
    assert s["bpw"] == bpw
    assert s["payload_ratio"] == pytest.approx(bpw / 32, rel=1e-12)
    assert s["code_bytes"] + s["scale_bytes"] + s["channel_bytes"] + s["header_bytes"] == s["total_bytes"]


def test_saving_against_8bit(rng):
    w = rng.standard_normal((16, 256)).astype(np.float32)
    s = compression_summary(from_tensor(quantize_tensor(w, family="2.75")), original_bytes=w.size)
    assert s["payload_ratio"] == pytest.approx(2.75 / 8)
    assert s["saving"] == pytest.approx(1 - 2.75 / 8)


def test_empty_summary():
    s = compression_summary(from_tensor(quantize_tensor(np.zeros((0, 64)), family="2.75")))
    assert s["payload_bytes"] == 0 and s["payload_ratio"] == 0.0
