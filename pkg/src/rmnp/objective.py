"""Training objective: cross-entropy plus two uncertainty-shaping penalties.

The distillation term pushes gate evidence toward modalities whose latent
posterior tightened most over its prior (information gain, softmax-weighted
with temperature tau).  The conflict term penalizes evidence on modalities
whose own prediction disagrees with the label, via a KL of the single-
modality Dirichlet against the uniform Dirichlet scaled by prediction error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .anp import TensorGaussian, UnimodalPrior

PROB_FLOOR = 1e-12


def information_gain(prior: UnimodalPrior, posterior: TensorGaussian) -> Tensor:
    """Entropy drop H(prior) - H(posterior) per row, shape (N, 1).

    For diagonal Gaussians this is 0.5 * sum_d ln(q_d / var_d); the constant
    terms cancel so no 2*pi*e factors appear.
    """
    ratio = prior.q / posterior.variance
    return (ratio.log() * 0.5).sum(axis=-1, keepdims=True)


def confidence_weights(gains: Tensor, tau: float) -> Tensor:
    """Temperature-softmax of per-modality information gains, rows sum to 1."""
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    gains = ad.as_tensor(gains)
    if gains.data.ndim != 2:
        raise ValueError("gains must be (N, |M|)")
    return ad.softmax(gains * (1.0 / tau), axis=1)


def ucd_loss(alpha: Tensor, rho: Tensor) -> Tensor:
    """Per-row distillation loss sum_m rho_m * (psi(S) - psi(alpha_m)).

    psi(S) - psi(alpha_m) is the expected negative log belief share of
    modality m under Dir(alpha), so high-confidence modalities (large rho)
    pull their evidence share up.  Returns shape (N,).
    """
    alpha = ad.as_tensor(alpha)
    rho = ad.as_tensor(rho)
    if alpha.data.shape != rho.data.shape:
        raise ValueError("alpha and rho must have matching shapes")
    strength = alpha.sum(axis=1, keepdims=True)
    gap = ad.digamma(strength) - ad.digamma(alpha)
    return (rho * gap).sum(axis=1)


def decompose_alpha(alpha: Tensor, m: int) -> Tensor:
    """Keep modality m's concentration, reset every other one to 1."""
    alpha = ad.as_tensor(alpha)
    n, k = alpha.data.shape
    if not 0 <= m < k:
        raise ValueError("modality index out of range")
    ones = Tensor(np.ones((n, 1)))
    cols = [alpha[:, j : j + 1] if j == m else ones for j in range(k)]
    return ad.concat(cols, axis=1)


def dirichlet_kl_uniform(alpha: Tensor) -> Tensor:
    """Differentiable KL(Dir(alpha) || Dir(1,...,1)) per row, shape (N,)."""
    alpha = ad.as_tensor(alpha)
    k = alpha.data.shape[1]
    strength = alpha.sum(axis=1)
    # uniform normalizer ln B(1,...,1) = -ln Gamma(k) since each ln Gamma(1) = 0
    term_norm = ad.lgamma(strength) - ad.lgamma(alpha).sum(axis=1) - _ln_gamma_scalar(k)
    centered = ad.digamma(alpha) - ad.digamma(strength.reshape(-1, 1))
    return term_norm + ((alpha - 1.0) * centered).sum(axis=1)


def _ln_gamma_scalar(k: int) -> float:
    from .numerics import ln_gamma

    return float(ln_gamma(float(k)))


def conflict_coefficients(y_onehot: Tensor, per_modality_probs: Sequence[Tensor]) -> list[Tensor]:
    """c_m = sum_k |y_k - yhat^m_k| per row, one (N, 1) tensor per modality."""
    y_onehot = ad.as_tensor(y_onehot)
    coeffs = []
    for probs in per_modality_probs:
        probs = ad.as_tensor(probs)
        if probs.data.shape != y_onehot.data.shape:
            raise ValueError("per-modality probabilities must match label shape")
        coeffs.append((y_onehot - probs).abs().sum(axis=1, keepdims=True))
    return coeffs


def ccr_loss(
    alpha: Tensor,
    y_onehot: Tensor,
    per_modality_probs: Sequence[Tensor],
) -> Tensor:
    """Per-row conflict loss sum_m c_m * KL(Dir(decompose(alpha, m)) || Dir(1))."""
    alpha = ad.as_tensor(alpha)
    if alpha.data.shape[1] != len(per_modality_probs):
        raise ValueError("one probability table per modality required")
    total = None
    for m, c_m in enumerate(conflict_coefficients(y_onehot, per_modality_probs)):
        kl = dirichlet_kl_uniform(decompose_alpha(alpha, m))
        term = c_m.reshape(-1) * kl
        total = term if total is None else total + term
    return total


def ce_loss(
    y_onehot: Tensor,
    fused_probs: Tensor,
    per_modality_probs: Sequence[Tensor],
) -> Tensor:
    """Mean cross-entropy of the fused head plus the modality-head average.

    Probabilities are clipped to [1e-12, 1] before the log so an exactly
    saturated head cannot produce infinities.
    """
    y_onehot = ad.as_tensor(y_onehot)
    if y_onehot.data.ndim != 2:
        raise ValueError("labels must be one-hot rows")

    def nll(probs: Tensor) -> Tensor:
        probs = ad.as_tensor(probs).clip(PROB_FLOOR, 1.0)
        return -(y_onehot * probs.log()).sum(axis=1)

    total = nll(fused_probs)
    if per_modality_probs:
        share = 1.0 / float(len(per_modality_probs))
        for probs in per_modality_probs:
            total = total + share * nll(probs)
    return total.mean()


@dataclass
class LossBreakdown:
    """Scalar loss terms; total == ce + lambda1*ucd + lambda2*ccr exactly."""

    ce: Tensor
    ucd: Tensor
    ccr: Tensor
    total: Tensor

    def as_floats(self) -> dict[str, float]:
        return {
            "ce": float(self.ce.data),
            "ucd": float(self.ucd.data),
            "ccr": float(self.ccr.data),
            "total": float(self.total.data),
        }


def total_loss(
    y_onehot: Tensor,
    fused_probs: Tensor,
    per_modality_probs: Sequence[Tensor],
    alpha: Tensor,
    priors: Sequence[UnimodalPrior],
    posteriors: Sequence[TensorGaussian],
    lambda1: float,
    lambda2: float,
    tau: float,
    use_ucd: bool = True,
    use_ccr: bool = True,
) -> LossBreakdown:
    """Assemble the full objective; disabled terms are reported as zero."""
    ce = ce_loss(y_onehot, fused_probs, per_modality_probs)
    zero = Tensor(np.zeros(()))
    if use_ucd:
        gains = ad.concat([information_gain(p, post) for p, post in zip(priors, posteriors)], axis=1)
        rho = confidence_weights(gains, tau)
        ucd = ucd_loss(alpha, rho).mean()
    else:
        ucd = zero
    if use_ccr:
        ccr = ccr_loss(alpha, y_onehot, per_modality_probs).mean()
    else:
        ccr = zero
    total = ce + lambda1 * ucd + lambda2 * ccr
    return LossBreakdown(ce=ce, ucd=ucd, ccr=ccr, total=total)
