"""Objective tests: information gain, distillation, conflict, assembly."""

import numpy as np
import pytest
from scipy import stats

from rmnp import autodiff as ad
from rmnp.anp import TensorGaussian, UnimodalPrior
from rmnp.numerics import Rng, digamma
from rmnp.objective import (
    LossBreakdown,
    PROB_FLOOR,
    ccr_loss,
    ce_loss,
    confidence_weights,
    conflict_coefficients,
    decompose_alpha,
    dirichlet_kl_uniform,
    information_gain,
    total_loss,
    ucd_loss,
)

EULER_GAMMA = 0.5772156649015329


def gaussian(mean, var):
    return TensorGaussian(mean=ad.Tensor(np.asarray(mean, float)), variance=ad.Tensor(np.asarray(var, float)))


def prior(u, q):
    return UnimodalPrior(u=ad.Tensor(np.asarray(u, float)), q=ad.Tensor(np.asarray(q, float)))


# ---------------------------------------------------------------------------
# information gain and confidence weights
# ---------------------------------------------------------------------------


def test_information_gain_hand_value():
    p = prior(np.zeros((2, 2)), np.ones((2, 2)))
    post = gaussian(np.zeros((2, 2)), np.full((2, 2), 0.5))
    gain = information_gain(p, post)
    assert gain.data.shape == (2, 1)
    assert np.allclose(gain.data, np.log(2.0), atol=1e-15)


def test_information_gain_zero_when_posterior_equals_prior():
    p = prior(np.ones((3, 4)), np.full((3, 4), 0.7))
    post = gaussian(np.ones((3, 4)), np.full((3, 4), 0.7))
    assert np.allclose(information_gain(p, post).data, 0.0, atol=1e-15)


def test_confidence_weights_simplex_and_limits():
    gains = ad.Tensor(np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]]))
    w = confidence_weights(gains, tau=1.0)
    assert np.allclose(w.data.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(w.data[1], 1.0 / 3.0, atol=1e-15)
    # high temperature flattens, low temperature concentrates on the max
    flat = confidence_weights(gains, tau=1e6)
    assert np.allclose(flat.data[0], 1.0 / 3.0, atol=1e-5)
    sharp = confidence_weights(gains, tau=1e-2)
    assert sharp.data[0, 2] > 0.999999


def test_confidence_weights_validation():
    with pytest.raises(ValueError, match="positive"):
        confidence_weights(ad.Tensor(np.zeros((1, 3))), tau=0.0)
    with pytest.raises(ValueError, match=r"\(N, \|M\|\)"):
        confidence_weights(ad.Tensor(np.zeros(3)), tau=1.0)


# ---------------------------------------------------------------------------
# distillation loss
# ---------------------------------------------------------------------------


def test_ucd_hand_value():
    # psi(3) - psi(1) = 1 + 1/2 = 1.5
    alpha = ad.Tensor(np.ones((1, 3)))
    rho = ad.Tensor(np.array([[1.0, 0.0, 0.0]]))
    out = ucd_loss(alpha, rho)
    assert out.data.shape == (1,)
    assert abs(out.data[0] - 1.5) < 1e-12


def test_ucd_uniform_rho_averages_components():
    alpha = ad.Tensor(np.array([[2.0, 3.0, 4.0]]))
    rho = ad.Tensor(np.full((1, 3), 1.0 / 3.0))
    expect = np.mean([digamma(9.0) - digamma(a) for a in (2.0, 3.0, 4.0)])
    assert abs(ucd_loss(alpha, rho).data[0] - expect) < 1e-12


def test_ucd_matches_monte_carlo():
    rng = np.random.default_rng(0)
    gen = Rng(1)
    for _ in range(8):
        alpha = gen.uniform(0.5, 5.0, 3)
        rho = gen.uniform(0.0, 1.0, 3)
        rho = rho / rho.sum()
        samples = rng.dirichlet(alpha, size=200_000)
        draws = -(rho * np.log(samples)).sum(axis=1)
        se = draws.std() / np.sqrt(draws.size)
        closed = ucd_loss(ad.Tensor(alpha.reshape(1, -1)), ad.Tensor(rho.reshape(1, -1)))
        assert abs(closed.data[0] - draws.mean()) < 3.0 * se + 1e-9


def test_ucd_shape_validation():
    with pytest.raises(ValueError, match="matching"):
        ucd_loss(ad.Tensor(np.ones((1, 3))), ad.Tensor(np.ones((1, 2))))


# ---------------------------------------------------------------------------
# conflict loss
# ---------------------------------------------------------------------------


def test_decompose_alpha():
    alpha = ad.Tensor(np.array([[2.0, 5.0, 7.0]]))
    kept = decompose_alpha(alpha, 1)
    assert np.array_equal(kept.data, [[1.0, 5.0, 1.0]])
    with pytest.raises(ValueError, match="out of range"):
        decompose_alpha(alpha, 3)


def test_dirichlet_kl_uniform_hand_value():
    alpha = ad.Tensor(np.array([[2.0, 1.0, 1.0]]))
    expect = np.log(3.0) - 5.0 / 6.0
    assert abs(dirichlet_kl_uniform(alpha).data[0] - expect) < 1e-12
    assert abs(dirichlet_kl_uniform(ad.Tensor(np.ones((1, 4)))).data[0]) < 1e-15


def test_dirichlet_kl_uniform_matches_logpdf_monte_carlo():
    rng = np.random.default_rng(3)
    alpha = np.array([1.7, 0.9, 3.2])
    samples = rng.dirichlet(alpha, size=200_000)
    draws = stats.dirichlet.logpdf(samples.T, alpha) - stats.dirichlet.logpdf(
        samples.T, np.ones(3)
    )
    se = draws.std() / np.sqrt(draws.size)
    closed = dirichlet_kl_uniform(ad.Tensor(alpha.reshape(1, -1))).data[0]
    assert abs(closed - draws.mean()) < 3.0 * se + 1e-9


def test_conflict_coefficients_hand_values():
    y = ad.Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    heads = [
        ad.Tensor(np.array([[0.8, 0.2], [0.0, 1.0]])),
        ad.Tensor(np.array([[0.0, 1.0], [1.0, 0.0]])),
    ]
    c = conflict_coefficients(y, heads)
    assert np.allclose(c[0].data, [[0.4], [0.0]], atol=1e-15)
    assert np.allclose(c[1].data, [[2.0], [2.0]], atol=1e-15)
    with pytest.raises(ValueError, match="match label shape"):
        conflict_coefficients(y, [ad.Tensor(np.zeros((3, 2)))])


def test_ccr_loss_zero_for_perfect_heads():
    y = ad.Tensor(np.array([[1.0, 0.0]]))
    perfect = [ad.Tensor(np.array([[1.0, 0.0]]))] * 3
    alpha = ad.Tensor(np.array([[4.0, 2.0, 7.0]]))
    assert abs(ccr_loss(alpha, y, perfect).data[0]) < 1e-15


def test_ccr_loss_assembles_decomposed_terms():
    y = ad.Tensor(np.array([[1.0, 0.0]]))
    heads = [
        ad.Tensor(np.array([[0.5, 0.5]])),
        ad.Tensor(np.array([[1.0, 0.0]])),
        ad.Tensor(np.array([[0.0, 1.0]])),
    ]
    alpha = ad.Tensor(np.array([[2.0, 3.0, 4.0]]))
    out = ccr_loss(alpha, y, heads)
    expect = 0.0
    for m, c in enumerate((1.0, 0.0, 2.0)):
        expect += c * dirichlet_kl_uniform(decompose_alpha(alpha, m)).data[0]
    assert abs(out.data[0] - expect) < 1e-12
    with pytest.raises(ValueError, match="per modality"):
        ccr_loss(alpha, y, heads[:2])


# ---------------------------------------------------------------------------
# cross-entropy
# ---------------------------------------------------------------------------


def test_ce_hand_values():
    y = ad.Tensor(np.array([[1.0, 0.0]]))
    fused = ad.Tensor(np.array([[0.5, 0.5]]))
    assert abs(ce_loss(y, fused, []).data - np.log(2.0)) < 1e-15
    heads = [ad.Tensor(np.array([[0.5, 0.5]]))] * 3
    assert abs(ce_loss(y, fused, heads).data - 2.0 * np.log(2.0)) < 1e-15


def test_ce_floor_stops_infinities():
    y = ad.Tensor(np.array([[0.0, 1.0]]))
    fused = ad.Tensor(np.array([[1.0, 0.0]]))
    out = ce_loss(y, fused, [])
    assert abs(out.data - (-np.log(PROB_FLOOR))) < 1e-9
    assert np.isfinite(out.data)


def test_ce_batch_mean():
    y = ad.Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    fused = ad.Tensor(np.array([[0.5, 0.5], [0.25, 0.75]]))
    expect = 0.5 * (np.log(2.0) + (-np.log(0.75)))
    assert abs(ce_loss(y, fused, []).data - expect) < 1e-15
    with pytest.raises(ValueError, match="one-hot"):
        ce_loss(ad.Tensor(np.array([1.0, 0.0])), fused, [])


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def assembly_instance(n=4, seed=0):
    gen = Rng(seed)
    y = np.zeros((n, 2))
    y[np.arange(n), gen.integers(0, 2, n)] = 1.0
    fused = gen.uniform(0.05, 0.95, (n, 1))
    fused = np.hstack([fused, 1.0 - fused])
    heads = []
    for _ in range(3):
        p = gen.uniform(0.05, 0.95, (n, 1))
        heads.append(ad.Tensor(np.hstack([p, 1.0 - p])))
    alpha = ad.Tensor(gen.uniform(1.0, 6.0, (n, 3)))
    priors = [prior(np.zeros((n, 2)), gen.uniform(0.5, 2.0, (n, 2))) for _ in range(3)]
    posts = [gaussian(np.zeros((n, 2)), gen.uniform(0.1, 0.4, (n, 2))) for _ in range(3)]
    return ad.Tensor(y), ad.Tensor(fused), heads, alpha, priors, posts


def test_total_loss_exact_decomposition():
    y, fused, heads, alpha, priors, posts = assembly_instance()
    out = total_loss(y, fused, heads, alpha, priors, posts, 0.2, 0.01, 20.0)
    assert isinstance(out, LossBreakdown)
    recon = out.ce.data + 0.2 * out.ucd.data + 0.01 * out.ccr.data
    assert out.total.data == recon
    floats = out.as_floats()
    assert set(floats) == {"ce", "ucd", "ccr", "total"}
    assert floats["ucd"] != 0.0 and floats["ccr"] != 0.0


def test_total_loss_disabled_terms_are_zero():
    y, fused, heads, alpha, priors, posts = assembly_instance(seed=1)
    out = total_loss(
        y, fused, heads, alpha, priors, posts, 0.2, 0.01, 20.0, use_ucd=False, use_ccr=False
    )
    assert out.ucd.data == 0.0 and out.ccr.data == 0.0
    assert out.total.data == out.ce.data
    only_ucd = total_loss(
        y, fused, heads, alpha, priors, posts, 0.2, 0.01, 20.0, use_ccr=False
    )
    assert only_ucd.ccr.data == 0.0 and only_ucd.ucd.data != 0.0


def test_total_loss_gradient_reaches_alpha():
    y, fused, heads, alpha, priors, posts = assembly_instance(seed=2)
    alpha = ad.parameter(alpha.data)
    out = total_loss(y, fused, heads, alpha, priors, posts, 0.2, 0.01, 20.0)
    out.total.backward()
    assert alpha.grad is not None
    assert np.all(np.isfinite(alpha.grad))
    assert np.any(alpha.grad != 0.0)
