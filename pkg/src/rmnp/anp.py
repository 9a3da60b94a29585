"""Per-modality attentive neural process over a learnable context set.

Each modality owns a small learnable context matrix C_X with fixed
class-balanced one-hot labels C_Y.  Two MLP heads encode cat(C_X; C_Y) into
mean-path rows R_ctx and positive variance-path rows S_ctx.  Cross-attention
from an account's representation to C_X produces a convex combination of
those rows, the per-account context summary (r, s); the prior is the column
mean of the same rows, and the posterior is the precision-weighted conjugate
combination of the two.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import MlpParams, init_encoder_params
from .numerics import DiagGaussian, Rng

VARIANCE_FLOOR = 1e-6


@dataclass
class TensorGaussian:
    """Diagonal Gaussian carried as differentiable (mean, variance) tensors."""

    mean: Tensor
    variance: Tensor

    def __post_init__(self):
        if self.mean.data.shape != self.variance.data.shape:
            raise ValueError("mean and variance must share a shape")
        if np.any(self.variance.data <= 0.0):
            raise ValueError("variance must be strictly positive")

    def to_diag(self) -> DiagGaussian:
        return DiagGaussian(self.mean.data.copy(), self.variance.data.copy())


@dataclass
class UnimodalLatentSummary:
    """Attention outputs (r, s): mean-path and positive variance-path rows."""

    r: Tensor
    s: Tensor

    def __post_init__(self):
        if self.r.data.shape != self.s.data.shape:
            raise ValueError("r and s must share a shape")
        if np.any(self.s.data <= 0.0):
            raise ValueError("s must be strictly positive")


@dataclass
class UnimodalPrior:
    """Per-modality prior (u, q) from averaging encoded context rows."""

    u: Tensor
    q: Tensor

    def __post_init__(self):
        if self.u.data.shape != self.q.data.shape:
            raise ValueError("u and q must share a shape")
        if np.any(self.q.data <= 0.0):
            raise ValueError("q must be strictly positive")


@dataclass
class ContextSet:
    """Learnable context inputs with fixed class-balanced one-hot labels.

    ``c_x`` is (N_C, d_s) and trainable; ``c_y`` is a constant (N_C, 2)
    one-hot block with exactly N_C/2 rows per class.  The two MLP heads map
    cat(C_X; C_Y) to d_e-wide mean and variance rows; the variance head is
    made positive downstream by softplus plus a small floor.
    """

    c_x: Tensor
    c_y: np.ndarray
    mean_mlp: MlpParams
    var_mlp: MlpParams

    def __post_init__(self):
        n_c = self.c_x.data.shape[0]
        if n_c % 2 != 0:
            raise ValueError("context size must be even")
        c_y = np.asarray(self.c_y, dtype=np.float64)
        if c_y.shape != (n_c, 2):
            raise ValueError("c_y must be (N_C, 2)")
        one_hot = np.all((c_y == 0.0) | (c_y == 1.0)) and np.all(c_y.sum(axis=1) == 1.0)
        if not one_hot or int(c_y[:, 1].sum()) != n_c // 2:
            raise ValueError("c_y must be one-hot with N_C/2 rows per class")
        expected_in = self.c_x.data.shape[1] + 2
        if self.mean_mlp.in_width != expected_in or self.var_mlp.in_width != expected_in:
            raise ValueError("context MLPs must accept cat(C_X; C_Y) rows")
        object.__setattr__(self, "c_y", c_y)

    @property
    def n_context(self) -> int:
        return self.c_x.data.shape[0]

    @property
    def d_s(self) -> int:
        return self.c_x.data.shape[1]

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.c_x", self.c_x
        yield from self.mean_mlp.named(f"{prefix}.mean_mlp")
        yield from self.var_mlp.named(f"{prefix}.var_mlp")


def init_context_set(n_context: int, d_s: int, d_e: int, rng: Rng) -> ContextSet:
    """Standard-normal C_X scaled by 1/sqrt(d_s); balanced one-hot C_Y."""
    if n_context < 2 or n_context % 2 != 0:
        raise ValueError("n_context must be even and at least 2")
    c_x = ad.parameter(rng.standard_normal((n_context, d_s)) / np.sqrt(d_s))
    c_y = np.zeros((n_context, 2))
    c_y[: n_context // 2, 0] = 1.0
    c_y[n_context // 2 :, 1] = 1.0
    mean_mlp = init_encoder_params((d_s + 2, d_e, d_e), rng.child(0))
    var_mlp = init_encoder_params((d_s + 2, d_e, d_e), rng.child(1))
    return ContextSet(c_x=c_x, c_y=c_y, mean_mlp=mean_mlp, var_mlp=var_mlp)


def encode_context(ctx: ContextSet) -> tuple[Tensor, Tensor]:
    """Encode context rows into (R_ctx, S_ctx); S_ctx = softplus(·) + 1e-6."""
    rows = ad.concat([ctx.c_x, Tensor(ctx.c_y)], axis=1)
    r_ctx = ctx.mean_mlp.apply(rows)
    s_ctx = ctx.var_mlp.apply(rows).softplus() + VARIANCE_FLOOR
    return r_ctx, s_ctx


def cross_attend(h, ctx: ContextSet, r_ctx: Tensor, s_ctx: Tensor) -> UnimodalLatentSummary:
    """Scaled dot-product attention from account rows to the context set.

    One weight vector per account row over the N_C context rows; both paths
    share the weights, so s stays positive as a convex combination of
    positive rows.
    """
    h = ad.as_tensor(h)
    single = h.data.ndim == 1
    if single:
        h = h.reshape(1, -1)
    if h.data.shape[1] != ctx.d_s:
        raise ValueError(f"account rows must have width d_s={ctx.d_s}")
    logits = (h @ ctx.c_x.T) * (1.0 / np.sqrt(ctx.d_s))
    weights = ad.softmax(logits, axis=1)
    r = weights @ r_ctx
    s = weights @ s_ctx
    if single:
        r, s = r.reshape(-1), s.reshape(-1)
    return UnimodalLatentSummary(r=r, s=s)


def unimodal_prior(r_ctx: Tensor, s_ctx: Tensor) -> UnimodalPrior:
    """Prior (u, q) as column means of the encoded context rows."""
    return UnimodalPrior(u=r_ctx.mean(axis=0), q=s_ctx.mean(axis=0))


def unimodal_posterior(summ: UnimodalLatentSummary, prior: UnimodalPrior) -> TensorGaussian:
    """Conjugate precision combination of summary and prior (weights 1 and 1).

    variance = (1/s + 1/q)⁻¹ and mean = variance · (r/s + u/q), elementwise;
    the single-modality reduction of the fused update.
    """
    precision = 1.0 / summ.s + 1.0 / prior.q
    variance = 1.0 / precision
    mean = variance * (summ.r / summ.s + prior.u / prior.q)
    return TensorGaussian(mean=mean, variance=variance)
