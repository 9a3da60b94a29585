"""Evidential gate and product-of-experts fusion tests."""

import numpy as np
import pytest

from rmnp import autodiff as ad
from rmnp.anp import UnimodalLatentSummary, UnimodalPrior
from rmnp.encoders import init_encoder_params
from rmnp.fusion import (
    EvidentialOpinion,
    FUSION_MODES,
    N_MODALITIES,
    OracleError,
    default_oracle_grid,
    fuse_reference_oracle,
    gate,
    gpoe_fuse,
    mlp_gate_weights,
    poe_fuse,
)
from rmnp.numerics import Rng, finite_diff_grad


def gate_mlp(d_h, seed=0):
    return init_encoder_params((3 * d_h, d_h, N_MODALITIES), Rng(seed))


def random_instance(rng, n_mod=3, shape=(1,)):
    summaries = [
        UnimodalLatentSummary(
            r=ad.Tensor(rng.standard_normal(shape)),
            s=ad.Tensor(rng.uniform(0.05, 3.0, shape)),
        )
        for _ in range(n_mod)
    ]
    priors = [
        UnimodalPrior(
            u=ad.Tensor(rng.standard_normal(shape)),
            q=ad.Tensor(rng.uniform(0.05, 3.0, shape)),
        )
        for _ in range(n_mod)
    ]
    return summaries, priors


def scalar_instance(r, s, u, q):
    summaries = [
        UnimodalLatentSummary(r=ad.Tensor(np.array([ri])), s=ad.Tensor(np.array([si])))
        for ri, si in zip(r, s)
    ]
    priors = [
        UnimodalPrior(u=ad.Tensor(np.array([ui])), q=ad.Tensor(np.array([qi])))
        for ui, qi in zip(u, q)
    ]
    return summaries, priors


# ---------------------------------------------------------------------------
# evidential gate
# ---------------------------------------------------------------------------


def test_gate_identities():
    rng = Rng(1)
    params = gate_mlp(5, seed=2)
    h = [rng.standard_normal((7, 5)) for _ in range(3)]
    op = gate(*h, params)
    assert np.all(op.e.data >= 0.0)
    assert np.allclose(op.alpha.data, op.e.data + 1.0, atol=1e-15)
    assert np.allclose(op.strength.data, op.alpha.data.sum(axis=1, keepdims=True))
    assert np.allclose(op.b.data, op.e.data / op.strength.data, atol=1e-15)
    assert np.allclose(op.eta.data, 3.0 / op.strength.data, atol=1e-15)
    total = op.eta.data[:, 0] + op.b.data.sum(axis=1)
    assert np.max(np.abs(total - 1.0)) < 1e-12


def test_gate_zero_evidence_is_exact():
    # drive the raw gate output far negative: softplus underflows to 0.0
    params = gate_mlp(4, seed=0)
    for w in params.weights:
        w.data[...] = 0.0
    params.biases[-1].data[...] = -1000.0
    op = gate(np.zeros((2, 4)), np.zeros((2, 4)), np.zeros((2, 4)), params)
    assert np.all(op.e.data == 0.0)
    assert np.all(op.eta.data == 1.0)
    assert np.all(op.b.data == 0.0)


def test_gate_accepts_single_rows():
    params = gate_mlp(4, seed=3)
    h = [Rng(4).standard_normal(4) for _ in range(3)]
    single = gate(*h, params)
    batch = gate(*(x.reshape(1, -1) for x in h), params)
    assert np.array_equal(single.b.data, batch.b.data)


def test_gate_validation():
    params = gate_mlp(4)
    with pytest.raises(ValueError, match="share one width"):
        gate(np.zeros((2, 4)), np.zeros((2, 5)), np.zeros((2, 4)), params)
    bad = init_encoder_params((12, 4, 2), Rng(0))
    with pytest.raises(ValueError, match="output 3"):
        gate(np.zeros((2, 4)), np.zeros((2, 4)), np.zeros((2, 4)), bad)
    with pytest.raises(ValueError, match="nonnegative"):
        EvidentialOpinion(
            e=ad.Tensor(np.array([[-0.1, 0.0, 0.0]])),
            alpha=ad.Tensor(np.ones((1, 3))),
            strength=ad.Tensor(np.ones((1, 1))),
            b=ad.Tensor(np.zeros((1, 3))),
            eta=ad.Tensor(np.ones((1, 1))),
        )


def test_mlp_gate_weights_simplex():
    params = gate_mlp(5, seed=6)
    h = [Rng(7).standard_normal((4, 5)) for _ in range(3)]
    w = mlp_gate_weights(*h, params)
    assert w.data.shape == (4, 3)
    assert np.all(w.data > 0.0)
    assert np.allclose(w.data.sum(axis=1), 1.0, atol=1e-12)


def test_fusion_mode_inventory():
    assert FUSION_MODES == ("gpoe_evidential", "poe_uniform", "gpoe_mlp")


# ---------------------------------------------------------------------------
# closed-form fusion
# ---------------------------------------------------------------------------


def test_single_modality_reduces_to_posterior():
    summaries, priors = scalar_instance([2.0], [1.0], [0.0], [1.0])
    fused = gpoe_fuse(summaries, priors, ad.Tensor(np.array([1.0])))
    assert abs(fused.mean.data[0] - 1.0) < 1e-15
    assert abs(fused.variance.data[0] - 0.5) < 1e-15


def test_three_equal_experts_hand_value():
    summaries, priors = scalar_instance([2.0] * 3, [1.0] * 3, [0.0] * 3, [1.0] * 3)
    fused = poe_fuse(summaries, priors)
    # precision = 3*(1 + 1/3) = 4; mean = (1/4)*3*2 = 1.5
    assert abs(fused.variance.data[0] - 0.25) < 1e-15
    assert abs(fused.mean.data[0] - 1.5) < 1e-15


def test_zero_belief_leaves_prior_average():
    summaries, priors = scalar_instance(
        [5.0, -5.0, 9.0], [0.01, 0.01, 0.01], [-1.0, 0.0, 1.0], [1.0, 1.0, 1.0]
    )
    fused = gpoe_fuse(summaries, priors, ad.Tensor(np.zeros(3)))
    # summaries vanish; precision = 3*(1/3) = 1, mean = (1/3)*(-1+0+1) = 0
    assert abs(fused.variance.data[0] - 1.0) < 1e-15
    assert abs(fused.mean.data[0] - 0.0) < 1e-15


def test_poe_equals_gpoe_with_unit_beliefs():
    rng = Rng(9)
    summaries, priors = random_instance(rng, shape=(4, 2))
    fused_poe = poe_fuse(summaries, priors)
    fused_gpoe = gpoe_fuse(summaries, priors, ad.Tensor(np.ones((4, 3))))
    assert np.array_equal(fused_poe.mean.data, fused_gpoe.mean.data)
    assert np.array_equal(fused_poe.variance.data, fused_gpoe.variance.data)


def test_belief_sharpening_monotonicity():
    rng = Rng(11)
    summaries, priors = random_instance(rng, shape=(1,))
    lo = gpoe_fuse(summaries, priors, ad.Tensor(np.array([0.2, 0.2, 0.2])))
    hi = gpoe_fuse(summaries, priors, ad.Tensor(np.array([0.9, 0.2, 0.2])))
    assert hi.variance.data[0] < lo.variance.data[0]


def test_fusion_permutation_invariance():
    rng = Rng(13)
    summaries, priors = random_instance(rng, shape=(2, 3))
    b = ad.Tensor(rng.uniform(0.0, 1.0, (2, 3)))
    fused = gpoe_fuse(summaries, priors, b)
    perm = [2, 0, 1]
    fused_p = gpoe_fuse(
        [summaries[i] for i in perm],
        [priors[i] for i in perm],
        ad.Tensor(b.data[:, perm]),
    )
    assert np.allclose(fused.mean.data, fused_p.mean.data, atol=1e-15)
    assert np.allclose(fused.variance.data, fused_p.variance.data, atol=1e-15)


def test_fusion_validation():
    summaries, priors = scalar_instance([1.0, 2.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError, match="pair up"):
        gpoe_fuse(summaries, priors[:1], ad.Tensor(np.ones(2)))
    with pytest.raises(ValueError, match="columns"):
        gpoe_fuse(summaries, priors, ad.Tensor(np.ones(3)))


def test_fusion_gradient():
    rng = Rng(15)
    summaries, priors = random_instance(rng, shape=(2,))
    b0 = rng.uniform(0.1, 0.9, 3)

    def loss_at(theta):
        b = ad.parameter(theta)
        fused = gpoe_fuse(summaries, priors, b)
        return (fused.mean * fused.mean).sum() + fused.variance.log().sum(), b

    loss, b = loss_at(b0)
    loss.backward()
    numeric = finite_diff_grad(lambda th: float(loss_at(th)[0].data), b0, h=1e-6)
    assert np.max(np.abs(b.grad - numeric) / np.maximum(np.abs(numeric), 1e-8)) < 1e-5


# ---------------------------------------------------------------------------
# grid oracle
# ---------------------------------------------------------------------------


def test_oracle_matches_closed_form():
    rng = Rng(21)
    worst = 0.0
    for _ in range(50):
        summaries, priors = random_instance(rng, shape=(1,))
        b = rng.uniform(0.0, 1.0, 3)
        fused = gpoe_fuse(summaries, priors, ad.Tensor(b))
        ref = fuse_reference_oracle(summaries, priors, b)
        worst = max(
            worst,
            abs(ref.mean[0] - fused.mean.data[0]) / max(abs(ref.mean[0]), 1e-12),
            abs(ref.variance[0] - fused.variance.data[0]) / ref.variance[0],
        )
    assert worst < 1e-6


def test_oracle_default_grid_covers_components():
    summaries, priors = scalar_instance([4.0, -2.0, 0.0], [1.0] * 3, [0.0] * 3, [2.0] * 3)
    grid = default_oracle_grid(summaries, priors)
    assert grid.shape == (4001,)
    spread = 10.0 * np.sqrt(2.0)
    assert grid[0] == pytest.approx(-2.0 - spread)
    assert grid[-1] == pytest.approx(4.0 + spread)


def test_oracle_rejects_coarse_grid():
    summaries, priors = scalar_instance([0.0] * 3, [1e-4] * 3, [0.0] * 3, [1e-4] * 3)
    coarse = np.linspace(-10.0, 10.0, 31)
    with pytest.raises(OracleError, match="coarse"):
        fuse_reference_oracle(summaries, priors, np.ones(3), grid=coarse)
    with pytest.raises(OracleError, match="16"):
        fuse_reference_oracle(summaries, priors, np.ones(3), grid=np.linspace(-1, 1, 8))


def test_oracle_validation():
    summaries, priors = random_instance(Rng(1), shape=(2,))
    with pytest.raises(ValueError, match="d_e = 1"):
        fuse_reference_oracle(summaries, priors, np.ones(3))
    summaries, priors = random_instance(Rng(1), shape=(1,))
    with pytest.raises(ValueError, match="per modality"):
        fuse_reference_oracle(summaries, priors, np.ones(2))
