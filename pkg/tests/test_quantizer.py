import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcac import autodiff as ad
from pcac.errors import NonFiniteInput
from pcac.quantizer import (QuantizerConfig, dequantize, quantize_hard,
                            quantize_soft, soft_assignment)

CFG = QuantizerConfig()


def test_centers_are_26_uniform_on_unit_interval():
    # [PAPER] 26 fixed centers on [-1, 1], spacing 2/25 = 0.08
    assert CFG.num_bins == 26
    assert CFG.centers[0] == -1.0 and CFG.centers[-1] == 1.0
    np.testing.assert_allclose(np.diff(CFG.centers), 0.08)


def test_hard_quantization_examples():
    # [DERIVED] nearest-center with ties to the lower symbol:
    # 0.0 sits exactly between centers 12 (-0.04) and 13 (+0.04)
    s, v = quantize_hard(np.array([-2.0, -1.0, 0.0, 0.039, 0.041, 1.0, 2.0]), CFG)
    assert s.tolist() == [0, 0, 12, 13, 13, 25, 25]
    np.testing.assert_allclose(v, CFG.centers[s])
    assert v[2] == pytest.approx(-0.04)

    with pytest.raises(NonFiniteInput):
        quantize_hard(np.array([np.nan]), CFG)


def test_quantization_is_idempotent_on_centers():
    s, v = quantize_hard(CFG.centers, CFG)
    assert s.tolist() == list(range(26))
    np.testing.assert_array_equal(v, CFG.centers)
    np.testing.assert_array_equal(dequantize(s, CFG), CFG.centers)


@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=1, max_size=40))
@settings(max_examples=100, deadline=None)
def test_hard_quantization_properties(vals):
    v = np.array(vals)
    s, q = quantize_hard(v, CFG)
    # symbols in range, error at most half a bin (up to the clamp)
    assert np.all((s >= 0) & (s < 26))
    inside = (v >= -1) & (v <= 1)
    assert np.all(np.abs(q[inside] - v[inside]) <= 0.04 + 1e-12)
    # monotone: sorting values sorts symbols
    order = np.argsort(v, kind="stable")
    assert np.all(np.diff(s[order]) >= 0)


def test_soft_assignment_matches_hard_at_low_temperature():
    rng = np.random.default_rng(0)
    # stay clear of bin midpoints, where the softmax never fully saturates
    v = CFG.centers[rng.integers(0, 26, size=50)] \
        + rng.uniform(-0.02, 0.02, size=50)
    cold = QuantizerConfig(temperature=1e-4)
    soft, _ = soft_assignment(v, cold)
    _, hard = quantize_hard(v, cold)
    np.testing.assert_allclose(soft, hard, atol=1e-9)


def test_soft_grad_matches_finite_differences():
    # [DERIVED] the closed-form surrogate derivative vs central differences
    rng = np.random.default_rng(1)
    v = rng.uniform(-1.2, 1.2, size=(6, 5))
    node = ad.Node(v)
    out = quantize_soft(node, CFG, mode="soft")
    ad.backward(ad.sum_all(out))
    h = 1e-6
    fd = np.zeros_like(v)
    for i in np.ndindex(v.shape):
        vp, vm = v.copy(), v.copy()
        vp[i] += h
        vm[i] -= h
        fd[i] = (soft_assignment(vp, CFG)[0][i] - soft_assignment(vm, CFG)[0][i]) / (2 * h)
    np.testing.assert_allclose(node.grad, fd, rtol=1e-5, atol=1e-7)


def test_ste_forward_is_hard_backward_is_soft():
    v = np.array([[0.3, -0.7]])
    node = ad.Node(v)
    ste = quantize_soft(node, CFG, mode="ste")
    np.testing.assert_array_equal(ste.value, quantize_hard(v, CFG)[1])
    soft_node = quantize_soft(ad.Node(v), CFG, mode="soft")
    ad.backward(ad.sum_all(ste))
    g_ste = node.grad.copy()
    n2 = soft_node.parents[0]
    ad.backward(ad.sum_all(soft_node))
    np.testing.assert_array_equal(g_ste, n2.grad)

    with pytest.raises(ValueError):
        quantize_soft(node, CFG, mode="nope")


def test_config_round_trips_through_dict():
    cfg = QuantizerConfig(num_bins=10, temperature=0.5)
    back = QuantizerConfig.from_dict(cfg.to_dict())
    np.testing.assert_array_equal(back.centers, cfg.centers)
    assert back.temperature == 0.5
