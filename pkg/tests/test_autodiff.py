"""Reverse-mode engine: every op gradient-checked against central differences."""

import numpy as np
import pytest
import scipy.special as sps

from rmnp import autodiff as ad
from rmnp.autodiff import Tensor
from rmnp.numerics import finite_diff_grad


def gradcheck(build, theta0, rtol=1e-6, atol=1e-8):
    """Compare backward() gradients with finite differences of a scalar map.

    ``build`` maps a flat numpy vector to a scalar Tensor while exposing the
    parameter Tensor it created, so both paths share the exact computation.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)

    def f(theta):
        scalar, _ = build(theta)
        return float(scalar.data)

    scalar, param = build(theta0)
    scalar.backward()
    numeric = finite_diff_grad(f, theta0)
    np.testing.assert_allclose(param.grad.ravel(), numeric, rtol=rtol, atol=atol)


def test_add_mul_broadcasting():
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=6)

    def build(theta):
        p = ad.parameter(theta.reshape(2, 3))
        row = Tensor(np.array([1.0, -2.0, 0.5]))
        out = ((p + row) * p * 3.0 - row / 2.0).sum()
        return out, p

    gradcheck(build, x0)


def test_broadcast_scalar_and_column():
    rng = np.random.default_rng(1)
    x0 = rng.normal(size=4)

    def build(theta):
        p = ad.parameter(theta.reshape(4, 1))
        wide = p + Tensor(np.zeros((4, 5)))  # column broadcast
        return (wide * wide).sum(), p

    gradcheck(build, x0)


def test_matmul():
    rng = np.random.default_rng(2)
    x0 = rng.normal(size=12)
    b = rng.normal(size=(4, 2))

    def build(theta):
        p = ad.parameter(theta.reshape(3, 4))
        return (p @ Tensor(b)).sum(), p

    gradcheck(build, x0)


def test_elementwise_chain():
    rng = np.random.default_rng(3)
    x0 = rng.uniform(0.5, 2.0, size=5)

    def build(theta):
        p = ad.parameter(theta)
        out = (p.exp() + p.log() + p.sqrt() + p**3 + (-p)).sum()
        return out, p

    gradcheck(build, x0)


def test_abs_softplus_leaky():
    rng = np.random.default_rng(4)
    x0 = rng.normal(size=8) + 0.1  # keep away from the abs/leaky kinks

    def build(theta):
        p = ad.parameter(theta)
        return (p.abs() + p.softplus() + p.leaky_relu(0.2)).sum(), p

    gradcheck(build, x0)


def test_clip_gradient_mask():
    p = ad.parameter(np.array([-2.0, 0.5, 3.0]))
    p.clip(0.0, 1.0).sum().backward()
    np.testing.assert_array_equal(p.grad, [0.0, 1.0, 0.0])


def test_sum_mean_axes():
    rng = np.random.default_rng(5)
    x0 = rng.normal(size=12)

    def build(theta):
        p = ad.parameter(theta.reshape(3, 4))
        out = p.sum(axis=0).mean() + p.mean(axis=1, keepdims=True).sum() + p.sum()
        return out, p

    gradcheck(build, x0)


def test_reshape_transpose_getitem():
    rng = np.random.default_rng(6)
    x0 = rng.normal(size=12)

    def build(theta):
        p = ad.parameter(theta.reshape(3, 4))
        out = (p.T.reshape(-1)[2:8] * 2.0).sum() + p[1, :].sum()
        return out, p

    gradcheck(build, x0)


def test_division_both_sides():
    rng = np.random.default_rng(7)
    x0 = rng.uniform(0.5, 2.0, size=6)

    def build(theta):
        p = ad.parameter(theta.reshape(2, 3))
        return (p / 3.0 + 2.0 / p + p / p.sum()).sum(), p

    gradcheck(build, x0)


def test_softmax_rows_and_grad():
    rng = np.random.default_rng(8)
    x0 = rng.normal(size=6)

    def build(theta):
        p = ad.parameter(theta.reshape(2, 3))
        sm = ad.softmax(p, axis=1)
        return (sm * Tensor(np.arange(6.0).reshape(2, 3))).sum(), p

    gradcheck(build, x0)
    sm = ad.softmax(Tensor(np.random.default_rng(9).normal(size=(4, 5))), axis=1)
    np.testing.assert_allclose(sm.data.sum(axis=1), np.ones(4), atol=1e-12)


def test_softmax_shift_invariance():
    x = np.random.default_rng(10).normal(size=(3, 4))
    a = ad.softmax(Tensor(x), axis=1).data
    b = ad.softmax(Tensor(x + 1000.0), axis=1).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_take_rows_and_segment_sum():
    rng = np.random.default_rng(11)
    x0 = rng.normal(size=8)
    index = np.array([0, 3, 3, 1, 2])
    segments = np.array([1, 0, 1, 2, 2])

    def build(theta):
        p = ad.parameter(theta.reshape(4, 2))
        rows = ad.take_rows(p, index)
        agg = ad.segment_sum(rows * rows, segments, 3)
        return (agg * Tensor(np.arange(6.0).reshape(3, 2))).sum(), p

    gradcheck(build, x0)


def test_segment_softmax_matches_manual():
    logits = np.array([1.0, 2.0, 0.5, -1.0, 3.0])
    segments = np.array([0, 0, 1, 1, 1])
    out = ad.segment_softmax(Tensor(logits), segments, 2).data.ravel()
    for seg in (0, 1):
        mask = segments == seg
        expected = np.exp(logits[mask] - logits[mask].max())
        expected /= expected.sum()
        np.testing.assert_allclose(out[mask], expected, atol=1e-12)


def test_segment_softmax_grad():
    rng = np.random.default_rng(12)
    x0 = rng.normal(size=6)
    segments = np.array([0, 0, 0, 1, 1, 1])

    def build(theta):
        p = ad.parameter(theta)
        sm = ad.segment_softmax(p, segments, 2)
        return (sm.reshape(-1) * Tensor(np.arange(6.0))).sum(), p

    gradcheck(build, x0)


def test_lgamma_digamma_grads():
    rng = np.random.default_rng(13)
    x0 = rng.uniform(0.5, 5.0, size=6)

    def build(theta):
        p = ad.parameter(theta)
        return (ad.lgamma(p) + ad.digamma(p)).sum(), p

    gradcheck(build, x0, rtol=1e-5)
    t = Tensor(np.array([2.5]), requires_grad=True)
    ad.lgamma(t).backward()
    assert t.grad[0] == pytest.approx(float(sps.digamma(2.5)), abs=1e-10)


def test_concat_grad():
    rng = np.random.default_rng(14)
    x0 = rng.normal(size=6)

    def build(theta):
        p = ad.parameter(theta.reshape(2, 3))
        cat = ad.concat([p, p * 2.0], axis=1)
        return (cat * Tensor(np.arange(12.0).reshape(2, 6))).sum(), p

    gradcheck(build, x0)


def test_gradient_accumulates_across_uses():
    p = ad.parameter(np.array([2.0]))
    (p * p + p * 3.0).backward()
    assert p.grad[0] == pytest.approx(2 * 2.0 + 3.0)


def test_deep_chain_no_recursion_limit():
    p = ad.parameter(np.array([1.0]))
    out = p
    for _ in range(5000):
        out = out * 1.0001
    out.backward()
    assert np.isfinite(p.grad[0])


def test_no_grad_blocks_graph():
    p = ad.parameter(np.array([1.0]))
    with ad.no_grad():
        out = p * 2.0
    assert not out.requires_grad


def test_backward_requires_scalar_or_gradient():
    p = ad.parameter(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        (p * 2.0).backward()
    (p * 2.0).backward(np.ones(2))
    np.testing.assert_array_equal(p.grad, [2.0, 2.0])


def test_matmul_requires_2d():
    with pytest.raises(ValueError):
        Tensor(np.ones(3)) @ Tensor(np.ones(3))
