"""Modality encoders: metadata MLP, text MLP, and relational graph attention.

All three map raw inputs to d_h-dimensional rows.  The graph encoder follows
the single-head relational-attention scheme: per-edge logits from a shared
attention vector over [transformed target ‖ transformed source ‖ projected
relation embedding], softmax over each node's in-neighborhood, then residual
aggregation.  Every node gets a dedicated self relation so the softmax is
defined for isolated nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataset import N_FEATURES, N_NUMERIC, HeteroGraph, TextEmbeddingTable
from .numerics import Rng

HIDDEN_SLOPE = 0.01  # leaky-rectifier slope in MLPs and the aggregation step
ATTN_SLOPE = 0.2  # leaky-rectifier slope on attention logits

SELF_RELATION = "self"


@dataclass
class MlpParams:
    """Stacked linear layers with leaky-rectifier hidden activations.

    The final layer is linear; hidden layers apply the fixed slope-0.01
    nonlinearity.  Weight shapes chain (d_in, d_out) left to right.
    """

    weights: tuple[Tensor, ...]
    biases: tuple[Tensor, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must pair up, one per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.data.ndim != 2 or b.data.shape != (w.data.shape[1],):
                raise ValueError(f"layer {i}: weight/bias shape mismatch")
            if i and self.weights[i - 1].data.shape[1] != w.data.shape[0]:
                raise ValueError(f"layer {i}: input width does not chain")

    @property
    def in_width(self) -> int:
        return self.weights[0].data.shape[0]

    @property
    def out_width(self) -> int:
        return self.weights[-1].data.shape[1]

    def apply(self, x: Tensor) -> Tensor:
        h = ad.as_tensor(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i != last:
                h = h.leaky_relu(HIDDEN_SLOPE)
        return h

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"{prefix}.w{i}", w
            yield f"{prefix}.b{i}", b


@dataclass
class HgnLayer:
    """One relational attention layer.

    ``attn`` is the full attention vector of length 2·d_out + d_r, consumed
    as [target block ‖ source block ‖ relation block].  ``rel_emb`` holds one
    d_r row per relation including the trailing self relation.
    """

    w: Tensor
    w_res: Tensor
    rel_emb: Tensor
    w_rel: Tensor
    attn: Tensor

    def __post_init__(self):
        d_out = self.w.data.shape[1]
        d_r = self.rel_emb.data.shape[1]
        if self.w_res.data.shape != self.w.data.shape:
            raise ValueError("w_res must match w shape")
        if self.w_rel.data.shape != (d_r, d_r):
            raise ValueError("w_rel must be (d_r, d_r)")
        if self.attn.data.shape != (2 * d_out + d_r, 1):
            raise ValueError("attn must be (2*d_out + d_r, 1)")

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.w", self.w
        yield f"{prefix}.w_res", self.w_res
        yield f"{prefix}.rel_emb", self.rel_emb
        yield f"{prefix}.w_rel", self.w_rel
        yield f"{prefix}.attn", self.attn


@dataclass
class HgnParams:
    """Stack of relational attention layers sharing one relation inventory."""

    layers: tuple[HgnLayer, ...]
    n_relations: int  # dataset relations, excluding the added self relation

    def __post_init__(self):
        if not self.layers:
            raise ValueError("at least one layer required")
        for i, layer in enumerate(self.layers):
            if layer.rel_emb.data.shape[0] != self.n_relations + 1:
                raise ValueError(f"layer {i}: relation embedding rows != R+1")

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for i, layer in enumerate(self.layers):
            yield from layer.named(f"{prefix}.layer{i}")


def glorot(rng: Rng, fan_in: int, fan_out: int, shape: tuple[int, ...]) -> Tensor:
    """Uniform(-a, a) init with a = sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return ad.parameter(rng.uniform(-bound, bound, shape))


def init_encoder_params(dims: Sequence[int], rng: Rng) -> MlpParams:
    """Glorot-uniform MLP over the given width chain, biases zero."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError("dims must chain at least two positive widths")
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        weights.append(glorot(rng, d_in, d_out, (d_in, d_out)))
        biases.append(ad.parameter(np.zeros(d_out)))
    return MlpParams(weights=tuple(weights), biases=tuple(biases))


def init_hgn_params(
    d_in: int, d_h: int, d_r: int, n_relations: int, n_layers: int, rng: Rng
) -> HgnParams:
    """Glorot-initialized graph attention stack (first layer maps d_in→d_h)."""
    if n_layers < 1:
        raise ValueError("n_layers must be at least 1")
    layers = []
    for l in range(n_layers):
        width_in = d_in if l == 0 else d_h
        layers.append(
            HgnLayer(
                w=glorot(rng, width_in, d_h, (width_in, d_h)),
                w_res=glorot(rng, width_in, d_h, (width_in, d_h)),
                rel_emb=glorot(rng, n_relations + 1, d_r, (n_relations + 1, d_r)),
                w_rel=glorot(rng, d_r, d_r, (d_r, d_r)),
                attn=glorot(rng, 2 * d_h + d_r, 1, (2 * d_h + d_r, 1)),
            )
        )
    return HgnParams(layers=tuple(layers), n_relations=n_relations)


def encode_metadata(x_num, x_bool, params: MlpParams) -> Tensor:
    """Two-block metadata encoding: MLP over [numeric ‖ boolean] rows."""
    x_num = ad.as_tensor(x_num)
    x_bool = ad.as_tensor(x_bool)
    width = x_num.data.shape[1] + x_bool.data.shape[1]
    if width != N_FEATURES or params.in_width != N_FEATURES:
        raise ValueError(f"metadata encoder expects input width {N_FEATURES}")
    return params.apply(ad.concat([x_num, x_bool], axis=1))


def encode_text(text: TextEmbeddingTable, params: MlpParams) -> Tensor:
    """MLP over pooled per-account text embeddings."""
    if text.d_text != params.in_width:
        raise ValueError(
            f"text encoder expects width {params.in_width}, got {text.d_text}"
        )
    return params.apply(Tensor(text.pooled))


def graph_edge_arrays(g: HeteroGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flatten a graph into (src, dst, rel_id) with self loops appended.

    Self loops use relation id R (one past the dataset relations), matching
    the trailing row of each layer's relation embedding table.
    """
    srcs = [e[:, 0] for e in g.edges] + [np.arange(g.num_nodes, dtype=np.int64)]
    dsts = [e[:, 1] for e in g.edges] + [np.arange(g.num_nodes, dtype=np.int64)]
    rels = [
        np.full(e.shape[0], r, dtype=np.int64) for r, e in enumerate(g.edges)
    ] + [np.full(g.num_nodes, g.n_relations, dtype=np.int64)]
    return np.concatenate(srcs), np.concatenate(dsts), np.concatenate(rels)


def encode_graph(g: HeteroGraph, x0, params: HgnParams) -> Tensor:
    """Run the attention stack over all nodes; returns (num_nodes, d_h).

    Per layer: logits = attnᵀ[W h_dst ‖ W h_src ‖ W_r rel], leaky-rectified
    and softmax-normalized over each node's in-neighborhood (self loop
    included); output = leaky(Σ attention · W h_src + W_res h_dst).
    """
    if g.n_relations != params.n_relations:
        raise ValueError("graph relation count does not match params")
    h = ad.as_tensor(x0)
    if h.data.ndim != 2 or h.data.shape[0] != g.num_nodes:
        raise ValueError("x0 must be (num_nodes, d_in)")
    src, dst, rel = graph_edge_arrays(g)
    n = g.num_nodes
    for layer in params.layers:
        if layer.w.data.shape[0] != h.data.shape[1]:
            raise ValueError("layer input width mismatch")
        d_out = layer.w.data.shape[1]
        wh = h @ layer.w
        rel_proj = layer.rel_emb @ layer.w_rel
        a_dst = layer.attn[:d_out]
        a_src = layer.attn[d_out : 2 * d_out]
        a_rel = layer.attn[2 * d_out :]
        score_dst = wh @ a_dst
        score_src = wh @ a_src
        score_rel = rel_proj @ a_rel
        logits = (
            ad.take_rows(score_dst, dst)
            + ad.take_rows(score_src, src)
            + ad.take_rows(score_rel, rel)
        )
        logits = logits.leaky_relu(ATTN_SLOPE).reshape(-1)
        delta = ad.segment_softmax(logits, dst, n)
        messages = delta * ad.take_rows(wh, src)
        agg = ad.segment_sum(messages, dst, n)
        h = (agg + h @ layer.w_res).leaky_relu(HIDDEN_SLOPE)
    return h
