"""End-to-end model: assembly, prediction, training, metrics, and reports.

The model couples three modality encoders (metadata MLP, text MLP, relational
graph attention over all nodes), one attentive-neural-process context set per
modality, an evidential gate, reliability-weighted product-of-experts fusion,
and a shared decoder producing a predictive logit Gaussian per account.

Training is mini-batch AdamW over the summed objective with full-graph
forward passes and loss masking on the batch rows; model selection keeps the
parameters with the best validation NLL.  Everything is deterministic in
(dataset, hyperparams, seed).
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, asdict
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from . import encoders, fusion, objective
from .anp import (
    ContextSet,
    TensorGaussian,
    UnimodalLatentSummary,
    UnimodalPrior,
    cross_attend,
    encode_context,
    init_context_set,
    unimodal_posterior,
    unimodal_prior,
)
from .autodiff import Tensor
from .dataset import (
    MODALITIES,
    N_FEATURES,
    N_NUMERIC,
    Dataset,
    NormStats,
    apply_norm_stats,
    normalize_features,
)
from .fusion import FUSION_MODES, EvidentialOpinion
from .numerics import DiagGaussian, Rng

ABLATIONS = ("no_ucd", "no_ccr", "mlp_gating", "poe_uniform")
LOG_STD_MIN, LOG_STD_MAX = -15.0, 5.0
LATENT_VARIANCE_FLOOR = 1e-30
DEFAULT_BATCH_SIZES = (256, 512, 1024, 2048)

CHECKPOINT_MAGIC = b"RMNPCKPT"
CHECKPOINT_VERSION = 1

_ADAM_BETA1, _ADAM_BETA2, _ADAM_EPS = 0.9, 0.999, 1e-8


class NumericalFailure(RuntimeError):
    """Raised when training or inference produces non-finite values."""


@dataclass(frozen=True)
class Hyperparams:
    """Training and architecture knobs with their default profile."""

    epochs: int = 200
    batch_size: int = 1024
    learning_rate: float = 1e-3
    weight_decay: float = 3e-5
    d_s: int = 128
    d_e: int = 128
    d_h: int = 128
    n_z_samples: int = 10
    n_context: int = 100
    lambda1: float = 0.2
    lambda2: float = 0.01
    tau: float = 20.0
    n_layers: int = 2
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "d_s", "d_e", "d_h", "n_context", "n_layers"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("learning_rate", "tau"):
            if float(getattr(self, name)) <= 0.0:
                raise ValueError(f"{name} must be positive")
        for name in ("weight_decay", "lambda1", "lambda2"):
            if float(getattr(self, name)) < 0.0:
                raise ValueError(f"{name} must be nonnegative")
        if self.n_z_samples < 1:
            raise ValueError("n_z_samples must be at least 1")
        if self.d_s != self.d_h:
            raise ValueError("attention requires d_s == d_h")
        if self.n_context % 2 != 0:
            raise ValueError("n_context must be even (class-balanced context)")


@dataclass
class RmnpModel:
    """All trainable parameters plus the dataset-shape and fusion contracts."""

    hp: Hyperparams
    d_text: int
    n_relations: int
    fusion_mode: str
    meta_mlp: encoders.MlpParams
    text_mlp: encoders.MlpParams
    graph_in: encoders.MlpParams
    hgn: encoders.HgnParams
    contexts: tuple[ContextSet, ContextSet, ContextSet]
    gate_mlp: encoders.MlpParams
    decoder: encoders.MlpParams
    norm_stats: NormStats | None = None

    def __post_init__(self):
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.fusion_mode!r}")
        hp = self.hp
        checks = (
            (self.meta_mlp.in_width, N_FEATURES, "meta_mlp input"),
            (self.meta_mlp.out_width, hp.d_h, "meta_mlp output"),
            (self.text_mlp.in_width, self.d_text, "text_mlp input"),
            (self.text_mlp.out_width, hp.d_h, "text_mlp output"),
            (self.graph_in.in_width, N_FEATURES + self.d_text, "graph_in input"),
            (self.graph_in.out_width, hp.d_h, "graph_in output"),
            (self.gate_mlp.in_width, 3 * hp.d_h, "gate input"),
            (self.gate_mlp.out_width, 3, "gate output"),
            (self.decoder.in_width, hp.d_e, "decoder input"),
            (self.decoder.out_width, 4, "decoder output"),
        )
        for got, want, what in checks:
            if got != want:
                raise ValueError(f"{what} width {got}, expected {want}")
        if len(self.contexts) != len(MODALITIES):
            raise ValueError("one context set per modality required")
        for ctx in self.contexts:
            if ctx.d_s != hp.d_s:
                raise ValueError("context width must equal d_s")

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        """Fixed registry order; checkpoints and the optimizer rely on it."""
        yield from self.meta_mlp.named("meta_mlp")
        yield from self.text_mlp.named("text_mlp")
        yield from self.graph_in.named("graph_in")
        yield from self.hgn.named("hgn")
        for modality, ctx in zip(MODALITIES, self.contexts):
            yield from ctx.named(f"ctx.{modality}")
        yield from self.gate_mlp.named("gate")
        yield from self.decoder.named("decoder")


@dataclass
class ForwardResult:
    """Latents, gate outputs, and probabilities for one batch of accounts."""

    joint: TensorGaussian
    summaries: tuple[UnimodalLatentSummary, ...]
    priors: tuple[UnimodalPrior, ...]
    posteriors: tuple[TensorGaussian, ...]
    opinion: EvidentialOpinion | None
    fusion_weights: Tensor
    joint_probs: Tensor
    unimodal_probs: tuple[Tensor, ...]


@dataclass
class PredictionReport:
    """Per-account predictions plus dataset-level metrics when labels exist."""

    indices: np.ndarray
    joint_probs: np.ndarray
    unimodal_probs: np.ndarray
    belief: np.ndarray | None
    eta: np.ndarray | None
    entropy: np.ndarray
    metrics: dict[str, float] | None


def init_model(
    hp: Hyperparams,
    d_text: int,
    n_relations: int,
    fusion_mode: str = "gpoe_evidential",
    rng: Rng | None = None,
) -> RmnpModel:
    """Fresh Glorot-initialized model for a dataset shape."""
    rng = rng if rng is not None else Rng(hp.seed)
    contexts = tuple(
        init_context_set(hp.n_context, hp.d_s, hp.d_e, rng.child(4 + i))
        for i in range(len(MODALITIES))
    )
    return RmnpModel(
        hp=hp,
        d_text=int(d_text),
        n_relations=int(n_relations),
        fusion_mode=fusion_mode,
        meta_mlp=encoders.init_encoder_params((N_FEATURES, hp.d_h, hp.d_h), rng.child(0)),
        text_mlp=encoders.init_encoder_params((d_text, hp.d_h, hp.d_h), rng.child(1)),
        graph_in=encoders.init_encoder_params((N_FEATURES + d_text, hp.d_h), rng.child(2)),
        hgn=encoders.init_hgn_params(hp.d_h, hp.d_h, hp.d_h, n_relations, hp.n_layers, rng.child(3)),
        contexts=contexts,
        gate_mlp=encoders.init_encoder_params((3 * hp.d_h, hp.d_h, 3), rng.child(7)),
        decoder=encoders.init_encoder_params((hp.d_e, hp.d_h, 4), rng.child(8)),
    )


# ---------------------------------------------------------------------------
# forward and prediction
# ---------------------------------------------------------------------------


def _decode_probs(decoder: encoders.MlpParams, latent: TensorGaussian,
                  eps_z: np.ndarray, eps_f: np.ndarray) -> Tensor:
    """Average softmax over reparameterized draws z = mean + std*eps.

    The same eps rows are broadcast to every account, so identical accounts
    in a batch get identical probabilities and batch composition does not
    change any single account's output.
    """
    std = latent.variance.sqrt()
    acc = None
    for i in range(eps_z.shape[0]):
        z = latent.mean + std * Tensor(eps_z[i])
        out = decoder.apply(z)
        mu = out[:, :2]
        log_std = out[:, 2:].clip(LOG_STD_MIN, LOG_STD_MAX)
        f = mu + log_std.exp() * Tensor(eps_f[i])
        p = ad.softmax(f, axis=1)
        acc = p if acc is None else acc + p
    return acc * (1.0 / eps_z.shape[0])


def _decode_mean_only(decoder: encoders.MlpParams, latent: TensorGaussian) -> Tensor:
    out = decoder.apply(latent.mean)
    return ad.softmax(out[:, :2], axis=1)


def predict(model: RmnpModel, latent, n_samples: int, rng: Rng,
            mean_only: bool = False) -> Tensor:
    """Class probabilities from a latent Gaussian through the shared decoder.

    Each draw adds decoder logit noise f ~ N(mu, exp(2*log_std)) with the
    log-std clamped to [-15, 5]; the returned probabilities are the draw
    average.  ``mean_only`` skips all sampling and decodes the latent mean.
    """
    if isinstance(latent, DiagGaussian):
        latent = TensorGaussian(
            mean=Tensor(latent.mean),
            variance=Tensor(np.maximum(latent.variance, LATENT_VARIANCE_FLOOR)),
        )
    if latent.mean.data.ndim == 1:
        latent = TensorGaussian(mean=latent.mean.reshape(1, -1),
                                variance=latent.variance.reshape(1, -1))
    if mean_only:
        return _decode_mean_only(model.decoder, latent)
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    d_e = latent.mean.data.shape[-1]
    eps_z = rng.standard_normal((n_samples, 1, d_e))
    eps_f = rng.standard_normal((n_samples, 1, 2))
    return _decode_probs(model.decoder, latent, eps_z, eps_f)


def forward(model: RmnpModel, ds: Dataset, batch_idx, rng: Rng,
            mean_only: bool = False) -> ForwardResult:
    """Full pipeline on one batch: encoders, attention, gate, fusion, decode.

    The graph encoder always runs over every node (messages need the whole
    graph); all other stages touch only the batch rows.  Normalization stats
    stored on the model are applied here, so callers pass raw datasets.
    """
    batch_idx = np.asarray(batch_idx, dtype=np.int64).reshape(-1)
    n = ds.accounts.n_accounts
    if batch_idx.size == 0:
        raise ValueError("batch must contain at least one account")
    if batch_idx.min() < 0 or batch_idx.max() >= n:
        raise ValueError("batch index out of range")
    if ds.text.d_text != model.d_text:
        raise ValueError(f"dataset d_text {ds.text.d_text} != model {model.d_text}")
    if ds.graph.n_relations != model.n_relations:
        raise ValueError("dataset relation count does not match model")

    work = apply_norm_stats(ds, model.norm_stats) if model.norm_stats is not None else ds
    feats = work.accounts.features
    pooled = work.text.pooled

    h_meta = encoders.encode_metadata(
        feats[batch_idx, :N_NUMERIC], feats[batch_idx, N_NUMERIC:], model.meta_mlp
    )
    h_text = model.text_mlp.apply(Tensor(pooled[batch_idx]))
    x0 = model.graph_in.apply(Tensor(np.concatenate([feats, pooled], axis=1)))
    h_graph = ad.take_rows(encoders.encode_graph(work.graph, x0, model.hgn), batch_idx)

    summaries, priors, posteriors = [], [], []
    for h, ctx in zip((h_meta, h_text, h_graph), model.contexts):
        r_ctx, s_ctx = encode_context(ctx)
        summ = cross_attend(h, ctx, r_ctx, s_ctx)
        prior = unimodal_prior(r_ctx, s_ctx)
        summaries.append(summ)
        priors.append(prior)
        posteriors.append(unimodal_posterior(summ, prior))

    if model.fusion_mode == "gpoe_mlp":
        opinion = None
        weights = fusion.mlp_gate_weights(h_meta, h_text, h_graph, model.gate_mlp)
        joint = fusion.gpoe_fuse(summaries, priors, weights)
    elif model.fusion_mode == "poe_uniform":
        opinion = fusion.gate(h_meta, h_text, h_graph, model.gate_mlp)
        weights = Tensor(np.ones((batch_idx.size, len(MODALITIES))))
        joint = fusion.poe_fuse(summaries, priors)
    else:
        opinion = fusion.gate(h_meta, h_text, h_graph, model.gate_mlp)
        weights = opinion.b
        joint = fusion.gpoe_fuse(summaries, priors, opinion.b)

    if mean_only:
        joint_probs = _decode_mean_only(model.decoder, joint)
        unimodal_probs = tuple(_decode_mean_only(model.decoder, p) for p in posteriors)
    else:
        n_z = model.hp.n_z_samples
        eps_z = rng.standard_normal((n_z, 1, model.hp.d_e))
        eps_f = rng.standard_normal((n_z, 1, 2))
        joint_probs = _decode_probs(model.decoder, joint, eps_z, eps_f)
        unimodal_probs = tuple(
            _decode_probs(model.decoder, p, eps_z, eps_f) for p in posteriors
        )

    return ForwardResult(
        joint=joint,
        summaries=tuple(summaries),
        priors=tuple(priors),
        posteriors=tuple(posteriors),
        opinion=opinion,
        fusion_weights=weights,
        joint_probs=joint_probs,
        unimodal_probs=unimodal_probs,
    )


def predictive_entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy per row in nats, clipped into [0, ln 2]."""
    p = np.clip(np.asarray(probs, dtype=np.float64), 1e-12, 1.0)
    h = -(p * np.log(p)).sum(axis=-1)
    return np.clip(h, 0.0, np.log(2.0))


def predict_report(model: RmnpModel, ds: Dataset, indices=None, rng: Rng | None = None,
                   mean_only: bool = False) -> PredictionReport:
    """Run inference and collect per-account outputs plus metrics if labeled."""
    if indices is None:
        indices = np.arange(ds.accounts.n_accounts, dtype=np.int64)
    indices = np.asarray(indices, dtype=np.int64)
    rng = rng if rng is not None else Rng(0)
    with ad.no_grad():
        fr = forward(model, ds, indices, rng, mean_only=mean_only)
    joint = fr.joint_probs.data
    _check_simplex(joint)
    unimodal = np.stack([p.data for p in fr.unimodal_probs])
    labels = ds.labels[indices]
    labeled = labels >= 0
    metrics = evaluate(joint[labeled], labels[labeled]) if labeled.any() else None
    return PredictionReport(
        indices=indices,
        joint_probs=joint,
        unimodal_probs=unimodal,
        belief=None if fr.opinion is None else fr.opinion.b.data,
        eta=None if fr.opinion is None else fr.opinion.eta.data.reshape(-1),
        entropy=predictive_entropy(joint),
        metrics=metrics,
    )


def _check_simplex(probs: np.ndarray) -> None:
    if not np.all(np.isfinite(probs)):
        raise NumericalFailure("probabilities are not finite")
    if np.max(np.abs(probs.sum(axis=-1) - 1.0)) > 1e-9 or probs.min() < -1e-12:
        raise NumericalFailure("probabilities left the simplex")


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def evaluate(probs: np.ndarray, labels: np.ndarray, n_bins: int = 10) -> dict[str, float]:
    """Accuracy, F1 (bot = positive), NLL x100, Brier, ECE, mean entropy."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[1] != 2 or probs.shape[0] == 0:
        raise ValueError("probs must be a nonempty (n, 2) array")
    if labels.shape != (probs.shape[0],) or not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0/1 and aligned with probs")
    _check_simplex(probs)
    pred = probs.argmax(axis=1)
    accuracy = float((pred == labels).mean())

    tp = float(((pred == 1) & (labels == 1)).sum())
    fp = float(((pred == 1) & (labels == 0)).sum())
    fn = float(((pred == 0) & (labels == 1)).sum())
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0

    clipped = np.clip(probs, 1e-12, 1.0)
    nll = float(-np.log(clipped[np.arange(labels.size), labels]).mean())
    onehot = np.eye(2)[labels]
    brier = float(((probs - onehot) ** 2).sum(axis=1).mean())

    confidence = probs.max(axis=1)
    correct = (pred == labels).astype(np.float64)
    bins = np.clip((confidence * n_bins).astype(np.int64), 0, n_bins - 1)
    ece = 0.0
    for b in range(n_bins):
        mask = bins == b
        if mask.any():
            ece += mask.mean() * abs(correct[mask].mean() - confidence[mask].mean())

    return {
        "accuracy": accuracy,
        "f1": f1,
        "nll_x100": 100.0 * nll,
        "brier": brier,
        "ece": float(ece),
        "mean_entropy": float(predictive_entropy(probs).mean()),
    }


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _resolve_ablations(ablations: Sequence[str]) -> tuple[str, bool, bool]:
    abl = frozenset(ablations)
    unknown = abl - set(ABLATIONS)
    if unknown:
        raise ValueError(f"unknown ablations: {sorted(unknown)}")
    if "mlp_gating" in abl and "poe_uniform" in abl:
        raise ValueError("mlp_gating and poe_uniform prescribe conflicting gates")
    if "mlp_gating" in abl:
        # softmax gating has no evidence, so neither evidential loss applies
        return "gpoe_mlp", False, False
    mode = "poe_uniform" if "poe_uniform" in abl else "gpoe_evidential"
    return mode, "no_ucd" not in abl, "no_ccr" not in abl


def _adamw_step(params, state, step, lr, weight_decay) -> None:
    for name, p in params:
        # parameters outside the ablated loss graph get a zero gradient
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m, v = state[name]
        m *= _ADAM_BETA1
        m += (1.0 - _ADAM_BETA1) * g
        v *= _ADAM_BETA2
        v += (1.0 - _ADAM_BETA2) * np.square(g)
        m_hat = m / (1.0 - _ADAM_BETA1**step)
        v_hat = v / (1.0 - _ADAM_BETA2**step)
        p.data -= lr * (m_hat / (np.sqrt(v_hat) + _ADAM_EPS) + weight_decay * p.data)


def train(
    ds: Dataset,
    hp: Hyperparams,
    ablations: Sequence[str] = (),
    log_path: str | None = None,
) -> tuple[RmnpModel, list[dict]]:
    """Train on the dataset's train split, selecting by validation NLL.

    Ablation switches: ``no_ucd``/``no_ccr`` drop the corresponding loss
    terms, ``poe_uniform`` fuses with uniform reliabilities, ``mlp_gating``
    replaces evidence with plain softmax weights (and therefore trains with
    cross-entropy only).  Appends one structured line per epoch to
    ``log_path`` when given.  Raises :class:`NumericalFailure` on non-finite
    losses, naming the offending term.
    """
    fusion_mode, use_ucd, use_ccr = _resolve_ablations(ablations)
    train_idx = ds.split_indices("train")
    val_idx = ds.split_indices("val")
    if train_idx.size == 0:
        raise ValueError("train requires a nonempty train split")
    if val_idx.size == 0:
        raise ValueError("train requires a nonempty val split for model selection")

    norm_ds, stats = normalize_features(ds)
    del norm_ds  # forward re-applies stats; computed here only for the train split
    root = Rng(hp.seed)
    model = init_model(hp, ds.text.d_text, ds.graph.n_relations, fusion_mode, root.child(0))
    model.norm_stats = stats

    params = list(model.named_parameters())
    state = {name: (np.zeros_like(p.data), np.zeros_like(p.data)) for name, p in params}
    shuffle_rng = root.child(1)
    sample_rng = root.child(2)
    eval_seed = root.child(3).seed

    labels = ds.labels
    onehot = np.eye(2)
    records: list[dict] = []
    best_nll = np.inf
    best_params: dict[str, np.ndarray] | None = None
    step = 0
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, hp.epochs + 1):
            order = train_idx[shuffle_rng.permutation(train_idx.size)]
            sums = {"ce": 0.0, "ucd": 0.0, "ccr": 0.0, "total": 0.0}
            for start in range(0, order.size, hp.batch_size):
                batch = order[start : start + hp.batch_size]
                for _, p in params:
                    p.zero_grad()
                fr = forward(model, ds, batch, sample_rng)
                lb = objective.total_loss(
                    Tensor(onehot[labels[batch]]),
                    fr.joint_probs,
                    list(fr.unimodal_probs),
                    None if fr.opinion is None else fr.opinion.alpha,
                    fr.priors,
                    fr.posteriors,
                    lambda1=hp.lambda1,
                    lambda2=hp.lambda2,
                    tau=hp.tau,
                    use_ucd=use_ucd,
                    use_ccr=use_ccr,
                )
                parts = lb.as_floats()
                for term, value in parts.items():
                    if not np.isfinite(value):
                        raise NumericalFailure(
                            f"epoch {epoch}: non-finite loss term {term} ({value})"
                        )
                    sums[term] += value * batch.size
                lb.total.backward()
                step += 1
                _adamw_step(params, state, step, hp.learning_rate, hp.weight_decay)

            record = {"epoch": epoch}
            record.update({k: sums[k] / order.size for k in ("ce", "ucd", "ccr", "total")})
            val_rng = Rng(eval_seed)  # same draws every epoch, comparable NLL
            with ad.no_grad():
                val_fr = forward(model, ds, val_idx, val_rng)
            val_metrics = evaluate(val_fr.joint_probs.data, labels[val_idx])
            record["val_acc"] = val_metrics["accuracy"]
            record["val_nll_x100"] = val_metrics["nll_x100"]
            records.append(record)
            if log_file:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if record["val_nll_x100"] < best_nll:
                best_nll = record["val_nll_x100"]
                best_params = {name: p.data.copy() for name, p in params}
    finally:
        if log_file:
            log_file.close()

    if best_params is not None:
        for name, p in params:
            p.data = best_params[name]
    return model, records


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def entropy_report(model: RmnpModel, datasets: Sequence[Dataset], rng: Rng,
                   n_bins: int = 30) -> list[dict]:
    """Predictive-entropy histograms over [0, ln 2] for each dataset.

    Uses the test split when one is tagged, otherwise every account.  Each
    dataset is evaluated with identical sampling draws (the rng's seed is
    replayed) so entropy differences reflect the data, not the noise.
    """
    reports = []
    edges = np.linspace(0.0, np.log(2.0), n_bins + 1)
    for ds in datasets:
        idx = ds.split_indices("test")
        if idx.size == 0:
            idx = np.arange(ds.accounts.n_accounts, dtype=np.int64)
        report = predict_report(model, ds, idx, Rng(rng.seed))
        counts, _ = np.histogram(report.entropy, bins=edges)
        reports.append(
            {
                "n_accounts": int(idx.size),
                "mean": float(report.entropy.mean()),
                "std": float(report.entropy.std()),
                "counts": counts,
                "edges": edges,
            }
        )
    return reports


def timing_probe(model: RmnpModel, ds: Dataset,
                 batch_sizes: Sequence[int] = DEFAULT_BATCH_SIZES,
                 repeats: int = 5) -> list[dict]:
    """Wall-clock forward times per batch size (one warmup, then repeats).

    Batches larger than the dataset cycle account indices, so the measured
    cost is the prediction path at exactly the requested width.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    rows = []
    n = ds.accounts.n_accounts
    for n_t in batch_sizes:
        if int(n_t) < 1:
            raise ValueError("batch sizes must be positive")
        idx = np.resize(np.arange(n, dtype=np.int64), int(n_t))
        times = []
        for rep in range(repeats + 1):
            t0 = time.perf_counter()
            with ad.no_grad():
                forward(model, ds, idx, Rng(0))
            elapsed = time.perf_counter() - t0
            if rep > 0:  # first run is warmup
                times.append(elapsed)
        times_arr = np.array(times)
        rows.append(
            {
                "batch_size": int(n_t),
                "median_s": float(np.median(times_arr)),
                "mean_s": float(times_arr.mean()),
                "std_s": float(times_arr.std()),
                "times": [float(t) for t in times_arr],
            }
        )
    return rows


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def _checkpoint_entries(model: RmnpModel) -> list[tuple[str, np.ndarray]]:
    entries = [(name, p.data) for name, p in model.named_parameters()]
    if model.norm_stats is not None:
        entries.append(("norm.mean", model.norm_stats.mean))
        entries.append(("norm.std", model.norm_stats.std))
    return entries


def save_checkpoint(model: RmnpModel, path: str) -> None:
    """Single binary file: magic, version, config JSON, named f64 tensors."""
    header = {
        "hyperparams": asdict(model.hp),
        "fusion_mode": model.fusion_mode,
        "d_text": model.d_text,
        "n_relations": model.n_relations,
        "has_norm_stats": model.norm_stats is not None,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    entries = _checkpoint_entries(model)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(entries)))
        for name, data in entries:
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", data.ndim))
            f.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            f.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


class CheckpointError(ValueError):
    """Raised for malformed or incompatible checkpoint files."""


def load_checkpoint(path: str) -> RmnpModel:
    """Rebuild a model from :func:`save_checkpoint` output, bit-exact."""
    with open(path, "rb") as f:
        raw = f.read()
    view = memoryview(raw)
    if len(raw) < 16 or raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    try:
        (version,) = struct.unpack_from("<I", view, 8)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack_from("<I", view, 12)
        offset = 16
        header = json.loads(bytes(view[offset : offset + blob_len]).decode("utf-8"))
        offset += blob_len
        (n_tensors,) = struct.unpack_from("<I", view, offset)
        offset += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack_from("<H", view, offset)
            offset += 2
            name = bytes(view[offset : offset + name_len]).decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", view, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}Q", view, offset)
            offset += 8 * ndim
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(view, dtype="<f8", count=count, offset=offset).reshape(shape)
            offset += 8 * count
            tensors[name] = data.astype(np.float64)
    except CheckpointError:
        raise
    except (struct.error, ValueError) as exc:  # short reads mean a cut-off file
        raise CheckpointError(f"truncated or corrupt checkpoint: {exc}") from None
    if offset != len(raw):
        raise CheckpointError("trailing bytes after last tensor")

    hp = Hyperparams(**header["hyperparams"])
    model = init_model(
        hp, header["d_text"], header["n_relations"], header["fusion_mode"],
        Rng(hp.seed).child(0),
    )
    for name, p in model.named_parameters():
        if name not in tensors:
            raise CheckpointError(f"checkpoint missing tensor {name!r}")
        if tensors[name].shape != p.data.shape:
            raise CheckpointError(f"tensor {name!r} has shape {tensors[name].shape}, "
                                  f"expected {p.data.shape}")
        p.data = tensors[name]
    if header["has_norm_stats"]:
        model.norm_stats = NormStats(mean=tensors["norm.mean"], std=tensors["norm.std"])
    return model


# ---------------------------------------------------------------------------
# parameter utilities (gradient checks, tests)
# ---------------------------------------------------------------------------


def flatten_parameters(model: RmnpModel) -> np.ndarray:
    """All parameters raveled in registry order."""
    return np.concatenate([p.data.ravel() for _, p in model.named_parameters()])


def assign_parameters(model: RmnpModel, flat: np.ndarray) -> None:
    """Inverse of :func:`flatten_parameters`; shapes must already match."""
    flat = np.asarray(flat, dtype=np.float64)
    offset = 0
    for _, p in model.named_parameters():
        size = p.data.size
        p.data = flat[offset : offset + size].reshape(p.data.shape).copy()
        offset += size
    if offset != flat.size:
        raise ValueError("flat vector length does not match parameter count")
