"""Evidential gating and reliability-weighted product-of-experts fusion.

The gate maps concatenated modality representations to nonnegative evidence
e, giving Dirichlet concentrations α = e + 1, belief masses b = e/S, and a
residual gate uncertainty η = |M|/S with η + Σb = 1.  Fusion combines the
per-modality context summaries (r, s) and priors (u, q) elementwise:

    variance = [Σ_m (b_m/s_m + (1/|M|)/q_m)]⁻¹
    mean     = variance · [Σ_m (b_m r_m/s_m + (1/|M|) u_m/q_m)]

``poe_fuse`` is the uniform-reliability special case (b ≡ 1).  A brute-force
1-D grid oracle normalizes the underlying density product directly and exists
only to test the closed form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .anp import TensorGaussian, UnimodalLatentSummary, UnimodalPrior
from .encoders import MlpParams
from .numerics import DiagGaussian

N_MODALITIES = 3

FUSION_MODES = ("gpoe_evidential", "poe_uniform", "gpoe_mlp")


class OracleError(RuntimeError):
    """Raised when the grid oracle detects it cannot resolve the density."""


@dataclass
class EvidentialOpinion:
    """Evidence and derived subjective-logic quantities for a batch.

    Shapes: ``e``/``alpha``/``b`` are (N, |M|); ``strength``/``eta`` are
    (N, 1).  By construction eta + Σ_m b_m = 1 per row.
    """

    e: Tensor
    alpha: Tensor
    strength: Tensor
    b: Tensor
    eta: Tensor

    def __post_init__(self):
        if np.any(self.e.data < 0.0):
            raise ValueError("evidence must be nonnegative")


def gate(h_meta, h_text, h_graph, params: MlpParams) -> EvidentialOpinion:
    """Evidential gate over concatenated modality rows.

    e = softplus(MLP(cat)), alpha = e + 1, S = Σ alpha, b = e/S, eta = |M|/S.
    """
    rows = [ad.as_tensor(h).reshape(1, -1) if ad.as_tensor(h).ndim == 1 else ad.as_tensor(h)
            for h in (h_meta, h_text, h_graph)]
    widths = {r.data.shape[1] for r in rows}
    if len(widths) != 1:
        raise ValueError("modality rows must share one width")
    if params.out_width != N_MODALITIES:
        raise ValueError(f"gate MLP must output {N_MODALITIES} values")
    raw = params.apply(ad.concat(rows, axis=1))
    e = raw.softplus()
    alpha = e + 1.0
    strength = alpha.sum(axis=1, keepdims=True)
    b = e / strength
    eta = float(N_MODALITIES) / strength
    return EvidentialOpinion(e=e, alpha=alpha, strength=strength, b=b, eta=eta)


def mlp_gate_weights(h_meta, h_text, h_graph, params: MlpParams) -> Tensor:
    """Softmax weights from the same gate MLP (ablation mode, no evidence)."""
    rows = [ad.as_tensor(h) for h in (h_meta, h_text, h_graph)]
    raw = params.apply(ad.concat(rows, axis=1))
    return ad.softmax(raw, axis=1)


def _check_modalities(summaries, priors) -> None:
    if len(summaries) != len(priors) or not summaries:
        raise ValueError("summaries and priors must pair up")
    dims = {s.r.data.shape[-1] for s in summaries} | {p.u.data.shape[-1] for p in priors}
    if len(dims) != 1:
        raise ValueError("modalities must share d_e")


def gpoe_fuse(
    summaries: Sequence[UnimodalLatentSummary],
    priors: Sequence[UnimodalPrior],
    b: Tensor,
) -> TensorGaussian:
    """Reliability-weighted fusion of unimodal experts into one Gaussian.

    ``b`` carries one column per modality, broadcast over latent dimensions;
    priors always enter with the uniform 1/|M| weight.
    """
    _check_modalities(summaries, priors)
    n_mod = len(summaries)
    b = ad.as_tensor(b)
    if b.data.shape[-1] != n_mod:
        raise ValueError("belief columns must match modality count")
    inv_m = 1.0 / float(n_mod)
    precision = None
    weighted = None
    for m, (summ, prior) in enumerate(zip(summaries, priors)):
        b_m = b[:, m : m + 1] if b.data.ndim == 2 else b[m]
        p_term = b_m / summ.s + inv_m / prior.q
        w_term = b_m * summ.r / summ.s + inv_m * prior.u / prior.q
        precision = p_term if precision is None else precision + p_term
        weighted = w_term if weighted is None else weighted + w_term
    variance = 1.0 / precision
    return TensorGaussian(mean=variance * weighted, variance=variance)


def poe_fuse(
    summaries: Sequence[UnimodalLatentSummary],
    priors: Sequence[UnimodalPrior],
) -> TensorGaussian:
    """Uniform product of experts: fusion with every reliability fixed at 1."""
    _check_modalities(summaries, priors)
    lead = summaries[0].r.data.shape[:-1] + (len(summaries),)
    return gpoe_fuse(summaries, priors, Tensor(np.ones(lead)))


def default_oracle_grid(
    summaries: Sequence[UnimodalLatentSummary],
    priors: Sequence[UnimodalPrior],
    n_points: int = 4001,
) -> np.ndarray:
    """Uniform 1-D grid covering every component mean ±10 max std."""
    centers = np.concatenate(
        [np.ravel(s.r.data) for s in summaries] + [np.ravel(p.u.data) for p in priors]
    )
    spread = 10.0 * np.sqrt(
        max(
            max(float(np.max(s.s.data)) for s in summaries),
            max(float(np.max(p.q.data)) for p in priors),
        )
    )
    return np.linspace(centers.min() - spread, centers.max() + spread, n_points)


def _grid_moments(z, log_weight) -> tuple[float, float]:
    w = np.exp(log_weight - log_weight.max())
    total = w.sum()
    mean = float((w * z).sum() / total)
    var = float((w * (z - mean) ** 2).sum() / total)
    return mean, var


def fuse_reference_oracle(
    summaries: Sequence[UnimodalLatentSummary],
    priors: Sequence[UnimodalPrior],
    b,
    grid: np.ndarray | None = None,
) -> DiagGaussian:
    """Brute-force 1-D fusion: normalize Π_m N(z|u,q)^{1/|M|} N(r|z,s)^{b_m}.

    Works per scalar latent dimension (d_e = 1) and exists solely as a test
    oracle for :func:`gpoe_fuse`.  Coarseness is detected by recomputing at
    doubled resolution; a relative moment drift above 1e-6 raises
    :class:`OracleError`.
    """
    _check_modalities(summaries, priors)
    r = np.array([float(np.ravel(s.r.data)[0]) for s in summaries])
    s = np.array([float(np.ravel(s.s.data)[0]) for s in summaries])
    u = np.array([float(np.ravel(p.u.data)[0]) for p in priors])
    q = np.array([float(np.ravel(p.q.data)[0]) for p in priors])
    for summ in summaries:
        if np.ravel(summ.r.data).size != 1:
            raise ValueError("oracle handles d_e = 1 only")
    b = np.ravel(np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64))
    if b.shape != r.shape:
        raise ValueError("b must provide one weight per modality")
    if grid is None:
        grid = default_oracle_grid(summaries, priors)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 16:
        raise OracleError("grid must be a 1-D array with at least 16 points")
    inv_m = 1.0 / len(summaries)

    def log_weight(z):
        zz = z[:, None]
        log_prior = -0.5 * (zz - u) ** 2 / q
        log_like = -0.5 * (r - zz) ** 2 / s
        return (inv_m * log_prior + b * log_like).sum(axis=1)

    mean, var = _grid_moments(grid, log_weight(grid))
    fine = np.linspace(grid[0], grid[-1], 2 * grid.size - 1)
    mean2, var2 = _grid_moments(fine, log_weight(fine))
    # a density narrower than one cell collapses onto a single grid point at
    # both resolutions, so the drift check alone cannot catch it
    spacing = (grid[-1] - grid[0]) / (grid.size - 1)
    if not (np.isfinite(mean2) and np.isfinite(var2)) or var2 <= (0.5 * spacing) ** 2:
        raise OracleError("grid too coarse to resolve the density width")
    drift = max(
        abs(mean2 - mean) / max(abs(mean2), 1e-12),
        abs(var2 - var) / max(abs(var2), 1e-12),
    )
    if drift > 1e-6:
        raise OracleError(f"grid too coarse: moment drift {drift:.3e}")
    return DiagGaussian(np.array([mean2]), np.array([var2]))
