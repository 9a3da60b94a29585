"""Dataset ingestion, synthesis, perturbation, and splitting.

A dataset couples four views of the same accounts: a 14-column metadata
table, pooled text embeddings, a multi-relation directed graph, and labels
with split tags.  The on-disk layout is five files (``metadata.csv``,
``embeddings.bin``, ``edges.csv``, ``labels.csv``, ``splits.csv``) whose
formats are documented on :func:`save_dataset`.

The synthetic generator draws class-conditional Gaussians per modality whose
Mahalanobis separation equals the configured per-modality gap, so the Bayes
accuracy of the best 1-D projection is Φ(separation/2) by construction.  The
graph modality carries its separation in the in-degree distribution and its
correlation structure through an edge-homophily parameter.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .numerics import Rng

METADATA_COLUMNS = (
    "followers_count",
    "listed_count",
    "statuses_count",
    "friends_count",
    "favourites_count",
    "screen_name_length",
    "name_length",
    "description_length",
    "followers_friends_ratio",
    "default_profile",
    "verified",
    "default_profile_image",
    "geo_enabled",
    "protected",
)
N_NUMERIC = 8
N_FEATURES = len(METADATA_COLUMNS)
MODALITIES = ("metadata", "text", "graph")
SPLIT_TAGS = ("train", "val", "test", "none")

EMBEDDING_MAGIC = b"RMNPEMB1"

# Raw-scale human means and within-class stds for the 8 numeric columns.
_NUMERIC_MEANS = np.array([1000.0, 50.0, 2000.0, 500.0, 1500.0, 12.0, 15.0, 80.0])
_NUMERIC_STDS = _NUMERIC_MEANS / 10.0
# Class-independent Bernoulli rates for the 5 binary columns; all class
# signal lives in the Gaussian columns so zero-separation configs carry none.
_BOOL_RATES = np.array([0.30, 0.10, 0.05, 0.40, 0.10])
_DEGREE_STD = 1.0


class DatasetError(ValueError):
    """Raised for malformed dataset files or violated dataset contracts."""


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AccountTable:
    """Per-account features, columns fixed to ``METADATA_COLUMNS`` order.

    The first 8 columns are numeric counts/lengths, column 8 is the
    followers/friends ratio (0 when friends is 0), and the last 5 are binary.
    Count nonnegativity is enforced at load time rather than here because
    normalization legitimately produces negative values in the numeric block.
    """

    features: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != N_FEATURES:
            raise DatasetError(f"features must be (n, {N_FEATURES})")
        if not np.all(np.isfinite(feats)):
            raise DatasetError("features must be finite")
        binary = feats[:, N_NUMERIC + 1 :]
        if not np.all((binary == 0.0) | (binary == 1.0)):
            raise DatasetError("binary feature columns must be 0 or 1")
        object.__setattr__(self, "features", feats)

    @property
    def n_accounts(self) -> int:
        return self.features.shape[0]

    @property
    def numeric(self) -> np.ndarray:
        return self.features[:, :N_NUMERIC]

    @property
    def boolean(self) -> np.ndarray:
        return self.features[:, N_NUMERIC:]


@dataclass(frozen=True)
class TextEmbeddingTable:
    """Pooled per-account text embeddings, optionally with per-tweet rows.

    When per-tweet vectors are supplied the pooled row is their arithmetic
    mean; a supplied pooled table must then agree within 1e-9.
    """

    pooled: np.ndarray
    per_tweet: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        pooled = np.asarray(self.pooled, dtype=np.float64)
        if pooled.ndim != 2:
            raise DatasetError("pooled embeddings must be (n, d_text)")
        if not np.all(np.isfinite(pooled)):
            raise DatasetError("pooled embeddings must be finite")
        if self.per_tweet is not None:
            if len(self.per_tweet) != pooled.shape[0]:
                raise DatasetError("per_tweet length must match account count")
            rows = []
            for i, tweets in enumerate(self.per_tweet):
                arr = np.asarray(tweets, dtype=np.float64)
                if arr.ndim != 2 or arr.shape[1] != pooled.shape[1] or arr.shape[0] < 1:
                    raise DatasetError(f"per_tweet[{i}] must be (n_i, d_text)")
                rows.append(arr.mean(axis=0))
            if np.max(np.abs(np.stack(rows) - pooled)) > 1e-9:
                raise DatasetError("pooled row is not the mean of per_tweet rows")
        object.__setattr__(self, "pooled", pooled)

    @classmethod
    def from_per_tweet(cls, per_tweet: Sequence[np.ndarray]) -> "TextEmbeddingTable":
        pooled = np.stack(
            [np.asarray(t, dtype=np.float64).mean(axis=0) for t in per_tweet]
        )
        return cls(pooled=pooled, per_tweet=tuple(np.asarray(t, dtype=np.float64) for t in per_tweet))

    @property
    def d_text(self) -> int:
        return self.pooled.shape[1]


@dataclass(frozen=True)
class HeteroGraph:
    """Directed multi-relation graph; edges are deduplicated and sorted.

    ``edges[r]`` is an (E_r, 2) int64 array of (src, dst) pairs.  The
    constructor canonicalizes each relation with a lexicographic sort and
    duplicate removal so graphs compare and round-trip bit-exactly.
    """

    num_nodes: int
    relation_names: tuple[str, ...]
    edges: tuple[np.ndarray, ...]

    def __post_init__(self):
        if self.num_nodes < 1:
            raise DatasetError("graph needs at least one node")
        names = tuple(str(n) for n in self.relation_names)
        if len(names) < 1:
            raise DatasetError("graph needs at least one relation")
        if len(set(names)) != len(names):
            raise DatasetError("relation names must be unique")
        if len(self.edges) != len(names):
            raise DatasetError("edges and relation_names length mismatch")
        canon = []
        for name, arr in zip(names, self.edges):
            arr = np.asarray(arr, dtype=np.int64).reshape(-1, 2)
            if arr.size and (arr.min() < 0 or arr.max() >= self.num_nodes):
                raise DatasetError(f"relation {name!r}: node index out of range")
            canon.append(np.unique(arr, axis=0) if arr.size else arr)
        object.__setattr__(self, "relation_names", names)
        object.__setattr__(self, "edges", tuple(canon))

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    def edge_counts(self) -> tuple[int, ...]:
        return tuple(int(e.shape[0]) for e in self.edges)


@dataclass(frozen=True)
class Dataset:
    """Accounts + text + graph + labels + split tags for one cohort.

    ``labels`` uses −1 for unlabeled accounts.  ``camouflaged`` is an
    in-memory side table from the synthetic generator listing bot accounts
    whose ``camouflaged_modality`` was resampled from the human distribution;
    it is not persisted by :func:`save_dataset`.
    """

    accounts: AccountTable
    text: TextEmbeddingTable
    graph: HeteroGraph
    labels: np.ndarray
    split: np.ndarray
    camouflaged: np.ndarray | None = None
    camouflaged_modality: str | None = None

    def __post_init__(self):
        n = self.accounts.n_accounts
        labels = np.asarray(self.labels, dtype=np.int64)
        split = np.asarray(self.split, dtype="U5")
        if self.text.pooled.shape[0] != n:
            raise DatasetError("text table account count mismatch")
        if self.graph.num_nodes != n:
            raise DatasetError("graph node count mismatch")
        if labels.shape != (n,):
            raise DatasetError("labels must be one per account")
        if not np.all(np.isin(labels, (-1, 0, 1))):
            raise DatasetError("labels must be in {-1, 0, 1}")
        if split.shape != (n,):
            raise DatasetError("split must be one tag per account")
        if not np.all(np.isin(split, SPLIT_TAGS)):
            raise DatasetError(f"split tags must be in {SPLIT_TAGS}")
        tagged = split != "none"
        if np.any(labels[tagged] < 0):
            raise DatasetError("every split-tagged account needs a label")
        camo = self.camouflaged
        if camo is not None:
            camo = np.asarray(camo, dtype=np.int64)
            if camo.size:
                if camo.min() < 0 or camo.max() >= n:
                    raise DatasetError("camouflage side table index out of range")
                if self.camouflaged_modality not in MODALITIES:
                    raise DatasetError("camouflaged_modality must name a modality")
            object.__setattr__(self, "camouflaged", camo)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "split", split)

    @property
    def n_accounts(self) -> int:
        return self.accounts.n_accounts

    def split_indices(self, tag: str) -> np.ndarray:
        if tag not in SPLIT_TAGS:
            raise DatasetError(f"unknown split tag {tag!r}")
        return np.flatnonzero(self.split == tag)


@dataclass(frozen=True)
class NormStats:
    """Train-split mean/std of the numeric feature block (std floored)."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != (N_NUMERIC,) or std.shape != (N_NUMERIC,):
            raise DatasetError(f"norm stats must cover the {N_NUMERIC} numeric columns")
        if np.any(std < 1e-6):
            raise DatasetError("std entries must respect the 1e-6 floor")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)


@dataclass(frozen=True)
class SynthConfig:
    """Configuration of the synthetic generator.

    ``class_separation`` gives the per-modality Mahalanobis gap between the
    class-conditional distributions (metadata, text, graph); ``feature_shift``
    translates every modality's means by that many within-class standard
    deviations for dataset-shift experiments.
    """

    n_accounts: int
    bot_fraction: float = 0.3
    d_text: int = 32
    class_separation: tuple[float, float, float] = (4.0, 4.0, 4.0)
    edge_homophily: float = 0.9
    camouflage_fraction: float = 0.0
    camouflaged_modality: str = "text"
    seed: int = 0
    avg_degree: float = 10.0
    n_relations: int = 2
    feature_shift: float = 0.0

    def __post_init__(self):
        if self.n_accounts < 10:
            raise DatasetError("n_accounts must be at least 10")
        for name in ("bot_fraction", "edge_homophily", "camouflage_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise DatasetError(f"{name} must lie in [0, 1]")
        if self.d_text < 1:
            raise DatasetError("d_text must be positive")
        if len(self.class_separation) != 3 or any(s < 0 for s in self.class_separation):
            raise DatasetError("class_separation needs 3 nonnegative entries")
        if self.camouflaged_modality not in MODALITIES:
            raise DatasetError(f"camouflaged_modality must be one of {MODALITIES}")
        if self.avg_degree <= 0:
            raise DatasetError("avg_degree must be positive")
        if self.n_relations < 1:
            raise DatasetError("n_relations must be at least 1")


# ---------------------------------------------------------------------------
# save / load
# ---------------------------------------------------------------------------


def save_dataset(ds: Dataset, path: str) -> None:
    """Write a dataset directory (raw feature scale expected).

    Files:
      * ``metadata.csv``: header of the 14 column names, one row per account
        (account index implicit in row order); floats in shortest
        round-tripping decimal form.
      * ``embeddings.bin``: 16-byte header ``RMNPEMB1 dddddd\\n`` (d_text as
        zero-padded 6-digit decimal) then n·d_text little-endian float32.
      * ``edges.csv``: ``relation_name,src,dst`` rows, relation order
        preserved, edges sorted.
      * ``labels.csv``: ``account,label`` for labeled accounts.
      * ``splits.csv``: ``account,split`` for split-tagged accounts.
    """
    os.makedirs(path, exist_ok=True)
    feats = ds.accounts.features
    with open(os.path.join(path, "metadata.csv"), "w", encoding="utf-8") as fh:
        fh.write(",".join(METADATA_COLUMNS) + "\n")
        for row in feats:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    d_text = ds.text.d_text
    if d_text >= 10**6:
        raise DatasetError("d_text exceeds the 6-digit header field")
    with open(os.path.join(path, "embeddings.bin"), "wb") as fh:
        header = f"{EMBEDDING_MAGIC.decode()} {d_text:06d}\n".encode()
        assert len(header) == 16
        fh.write(header)
        fh.write(np.ascontiguousarray(ds.text.pooled, dtype="<f4").tobytes())
    with open(os.path.join(path, "edges.csv"), "w", encoding="utf-8") as fh:
        fh.write("relation_name,src,dst\n")
        for name, arr in zip(ds.graph.relation_names, ds.graph.edges):
            for src, dst in arr:
                fh.write(f"{name},{src},{dst}\n")
    with open(os.path.join(path, "labels.csv"), "w", encoding="utf-8") as fh:
        fh.write("account,label\n")
        for i in np.flatnonzero(ds.labels >= 0):
            fh.write(f"{i},{ds.labels[i]}\n")
    with open(os.path.join(path, "splits.csv"), "w", encoding="utf-8") as fh:
        fh.write("account,split\n")
        for i in np.flatnonzero(ds.split != "none"):
            fh.write(f"{i},{ds.split[i]}\n")


def _read_lines(path: str, name: str) -> list[str]:
    full = os.path.join(path, name)
    if not os.path.isfile(full):
        raise DatasetError(f"{name}: missing file")
    with open(full, "r", encoding="utf-8") as fh:
        return fh.read().splitlines()


def load_dataset(path: str) -> Dataset:
    """Load and validate a dataset directory written by :func:`save_dataset`.

    Raises:
        DatasetError: any missing file or malformed content; the message
            names the offending file and line.
    """
    lines = _read_lines(path, "metadata.csv")
    if not lines or lines[0] != ",".join(METADATA_COLUMNS):
        raise DatasetError("metadata.csv line 1: bad or missing header")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != N_FEATURES:
            raise DatasetError(f"metadata.csv line {lineno}: expected {N_FEATURES} fields")
        try:
            row = [float(p) for p in parts]
        except ValueError as exc:
            raise DatasetError(f"metadata.csv line {lineno}: {exc}") from None
        if not all(np.isfinite(row)):
            raise DatasetError(f"metadata.csv line {lineno}: non-finite feature")
        if any(v < 0 for v in row[: N_NUMERIC + 1]):
            raise DatasetError(f"metadata.csv line {lineno}: negative count or ratio")
        rows.append(row)
    if not rows:
        raise DatasetError("metadata.csv line 2: no account rows")
    feats = np.asarray(rows, dtype=np.float64)
    n = feats.shape[0]

    emb_path = os.path.join(path, "embeddings.bin")
    if not os.path.isfile(emb_path):
        raise DatasetError("embeddings.bin: missing file")
    with open(emb_path, "rb") as fh:
        header = fh.read(16)
        payload = fh.read()
    if len(header) != 16 or not header.startswith(EMBEDDING_MAGIC + b" "):
        raise DatasetError("embeddings.bin: bad 16-byte header")
    try:
        d_text = int(header[9:15])
    except ValueError:
        raise DatasetError("embeddings.bin: bad dimension field in header") from None
    if d_text < 1 or header[15:16] != b"\n":
        raise DatasetError("embeddings.bin: bad dimension field in header")
    if len(payload) != n * d_text * 4:
        raise DatasetError(
            f"embeddings.bin: embedding size mismatch "
            f"(expected {n}*{d_text}*4 bytes, found {len(payload)})"
        )
    pooled = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(n, d_text)

    lines = _read_lines(path, "edges.csv")
    if not lines or lines[0] != "relation_name,src,dst":
        raise DatasetError("edges.csv line 1: bad or missing header")
    rel_order: list[str] = []
    rel_edges: dict[str, list[tuple[int, int]]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3:
            raise DatasetError(f"edges.csv line {lineno}: expected 3 fields")
        name = parts[0]
        try:
            src, dst = int(parts[1]), int(parts[2])
        except ValueError as exc:
            raise DatasetError(f"edges.csv line {lineno}: {exc}") from None
        if not (0 <= src < n and 0 <= dst < n):
            raise DatasetError(f"edges.csv line {lineno}: node index out of range")
        if name not in rel_edges:
            rel_order.append(name)
            rel_edges[name] = []
        rel_edges[name].append((src, dst))
    if not rel_order:
        raise DatasetError("edges.csv line 2: no edges")
    graph = HeteroGraph(
        num_nodes=n,
        relation_names=tuple(rel_order),
        edges=tuple(np.asarray(rel_edges[r], dtype=np.int64) for r in rel_order),
    )

    labels = np.full(n, -1, dtype=np.int64)
    lines = _read_lines(path, "labels.csv")
    if not lines or lines[0] != "account,label":
        raise DatasetError("labels.csv line 1: bad or missing header")
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 2:
            raise DatasetError(f"labels.csv line {lineno}: expected 2 fields")
        try:
            account, label = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise DatasetError(f"labels.csv line {lineno}: {exc}") from None
        if not 0 <= account < n:
            raise DatasetError(f"labels.csv line {lineno}: node index out of range")
        if label not in (0, 1):
            raise DatasetError(f"labels.csv line {lineno}: label must be 0 or 1")
        if labels[account] != -1:
            raise DatasetError(f"labels.csv line {lineno}: duplicate account")
        labels[account] = label

    split = np.full(n, "none", dtype="U5")
    lines = _read_lines(path, "splits.csv")
    if not lines or lines[0] != "account,split":
        raise DatasetError("splits.csv line 1: bad or missing header")
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 2:
            raise DatasetError(f"splits.csv line {lineno}: expected 2 fields")
        try:
            account = int(parts[0])
        except ValueError as exc:
            raise DatasetError(f"splits.csv line {lineno}: {exc}") from None
        if not 0 <= account < n:
            raise DatasetError(f"splits.csv line {lineno}: node index out of range")
        if parts[1] not in ("train", "val", "test"):
            raise DatasetError(f"splits.csv line {lineno}: bad split tag {parts[1]!r}")
        if split[account] != "none":
            raise DatasetError(f"splits.csv line {lineno}: duplicate account")
        if labels[account] < 0:
            raise DatasetError(f"splits.csv line {lineno}: split-tagged account lacks a label")
        split[account] = parts[1]

    return Dataset(
        accounts=AccountTable(feats),
        text=TextEmbeddingTable(pooled),
        graph=graph,
        labels=labels,
        split=split,
    )


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def normalize_features(ds: Dataset) -> tuple[Dataset, NormStats]:
    """Z-score the numeric block with train-split statistics.

    The ratio and binary columns pass through untouched.  Population std with
    a 1e-6 floor, so constant columns normalize to zeros.
    """
    train = ds.split_indices("train")
    if train.size == 0:
        raise DatasetError("normalize_features requires a nonempty train split")
    numeric = ds.accounts.numeric
    mean = numeric[train].mean(axis=0)
    std = np.maximum(numeric[train].std(axis=0), 1e-6)
    stats = NormStats(mean=mean, std=std)
    return apply_norm_stats(ds, stats), stats


def apply_norm_stats(ds: Dataset, stats: NormStats) -> Dataset:
    """Apply previously computed normalization to another dataset."""
    feats = ds.accounts.features.copy()
    feats[:, :N_NUMERIC] = (feats[:, :N_NUMERIC] - stats.mean) / stats.std
    return replace(ds, accounts=AccountTable(feats))


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------


def _draw_metadata(eff_labels: np.ndarray, sep: float, shift: float, rng: Rng) -> np.ndarray:
    n = eff_labels.shape[0]
    # Spread the modality gap evenly over the 8 numeric columns so the total
    # Mahalanobis separation equals `sep`.
    per_col = sep / np.sqrt(N_NUMERIC)
    means = _NUMERIC_MEANS + (shift * _NUMERIC_STDS)
    numeric = means + _NUMERIC_STDS * rng.standard_normal((n, N_NUMERIC))
    numeric[eff_labels == 1] += per_col * _NUMERIC_STDS
    numeric = np.maximum(numeric, 0.0)
    followers, friends = numeric[:, 0], numeric[:, 3]
    ratio = np.where(friends > 0.0, followers / np.maximum(friends, 1e-300), 0.0)
    binary = (rng.uniform(0.0, 1.0, (n, len(_BOOL_RATES))) < _BOOL_RATES).astype(np.float64)
    return np.column_stack([numeric, ratio, binary])


def _draw_text(eff_labels: np.ndarray, sep: float, shift: float, d_text: int, rng: Rng) -> np.ndarray:
    n = eff_labels.shape[0]
    pooled = rng.standard_normal((n, d_text)) + shift
    pooled[eff_labels == 1] += sep / np.sqrt(d_text)
    # Quantize to float32 precision now so the on-disk round trip is bit-exact.
    return pooled.astype(np.float32).astype(np.float64)


def _draw_graph(
    eff_labels: np.ndarray,
    sep: float,
    shift: float,
    avg_degree: float,
    homophily: float,
    n_relations: int,
    rng: Rng,
) -> HeteroGraph:
    n = eff_labels.shape[0]
    humans = np.flatnonzero(eff_labels == 0)
    bots = np.flatnonzero(eff_labels == 1)
    names = (
        ("following", "follower")
        if n_relations == 2
        else tuple(f"rel{r}" for r in range(n_relations))
    )
    if n < 2:
        raise DatasetError("graph generation needs at least 2 nodes")
    degree_mean = avg_degree + shift * _DEGREE_STD + sep * _DEGREE_STD * (eff_labels == 1)
    relations = []
    for _ in range(n_relations):
        degrees = np.maximum(
            1, np.rint(degree_mean + _DEGREE_STD * rng.standard_normal(n)).astype(np.int64)
        )
        total = int(degrees.sum())
        dst = np.repeat(np.arange(n), degrees)
        same = rng.uniform(0.0, 1.0, total) < homophily
        src_class = np.where(same, eff_labels[dst], 1 - eff_labels[dst])
        src = np.empty(total, dtype=np.int64)
        for klass, pool in ((0, humans), (1, bots)):
            mask = src_class == klass
            if not mask.any():
                continue
            if pool.size == 0:
                # one-class cohorts: draw from whichever class exists
                pool = bots if klass == 0 else humans
            src[mask] = pool[rng.integers(0, pool.size, size=int(mask.sum()))]
        # redraw the rare self loops from the same class pools
        loop = np.flatnonzero(src == dst)
        rounds = 0
        while loop.size:
            rounds += 1
            if rounds > 100:
                raise DatasetError("self-loop elimination failed; class pool too small")
            for klass, pool in ((0, humans), (1, bots)):
                mask = loop[src_class[loop] == klass]
                if mask.size == 0:
                    continue
                p = pool if pool.size else (bots if klass == 0 else humans)
                src[mask] = p[rng.integers(0, p.size, size=mask.size)]
            loop = np.flatnonzero(src == dst)
        relations.append(np.column_stack([src, dst]))
    return HeteroGraph(num_nodes=n, relation_names=names, edges=tuple(relations))


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Generate a labeled multi-modal cohort, deterministic in ``cfg.seed``.

    Camouflaged bots (a ``camouflage_fraction`` share of the bot class) have
    the configured modality drawn from the human class-conditional
    distribution; their indices are returned on the dataset's side table.
    """
    root = Rng(cfg.seed)
    n = cfg.n_accounts
    n_bots = int(round(cfg.bot_fraction * n))
    order = root.child(0).permutation(n)
    labels = np.zeros(n, dtype=np.int64)
    labels[order[:n_bots]] = 1

    camo_rng = root.child(1)
    n_camo = int(np.floor(cfg.camouflage_fraction * n_bots))
    bot_idx = np.flatnonzero(labels == 1)
    camouflaged = np.sort(bot_idx[camo_rng.choice(bot_idx.size, n_camo, replace=False)]) \
        if n_camo else np.empty(0, dtype=np.int64)

    def effective(modality: str) -> np.ndarray:
        eff = labels.copy()
        if modality == cfg.camouflaged_modality and camouflaged.size:
            eff[camouflaged] = 0
        return eff

    sep_meta, sep_text, sep_graph = cfg.class_separation
    feats = _draw_metadata(effective("metadata"), sep_meta, cfg.feature_shift, root.child(2))
    pooled = _draw_text(effective("text"), sep_text, cfg.feature_shift, cfg.d_text, root.child(3))
    graph = _draw_graph(
        effective("graph"),
        sep_graph,
        cfg.feature_shift,
        cfg.avg_degree,
        cfg.edge_homophily,
        cfg.n_relations,
        root.child(4),
    )
    return Dataset(
        accounts=AccountTable(feats),
        text=TextEmbeddingTable(pooled),
        graph=graph,
        labels=labels,
        split=np.full(n, "none", dtype="U5"),
        camouflaged=camouflaged,
        camouflaged_modality=cfg.camouflaged_modality if n_camo else None,
    )


# ---------------------------------------------------------------------------
# perturbation and splitting
# ---------------------------------------------------------------------------


def inject_camouflage_edges(
    graph: HeteroGraph, labels: np.ndarray, proportion: float, rng: Rng
) -> HeteroGraph:
    """Add ⌊proportion·|E_r|⌋ new human→bot edges to every relation.

    New edges are sampled uniformly over (human, bot) pairs, rejecting pairs
    already present so the added count is exact; original edges are kept.
    """
    if not 0.0 <= proportion <= 1.0:
        raise DatasetError("proportion must lie in [0, 1]")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (graph.num_nodes,):
        raise DatasetError("labels must cover all nodes")
    if proportion == 0.0:
        return graph
    humans = np.flatnonzero(labels == 0)
    bots = np.flatnonzero(labels == 1)
    if humans.size == 0 or bots.size == 0:
        raise DatasetError("edge injection needs both human and bot nodes")
    new_edges = []
    for name, arr in zip(graph.relation_names, graph.edges):
        k = int(np.floor(proportion * arr.shape[0]))
        existing = {(int(s), int(d)) for s, d in arr}
        capacity = humans.size * bots.size - sum(
            1 for s, d in existing if labels[s] == 0 and labels[d] == 1
        )
        if k > capacity:
            raise DatasetError(f"relation {name!r}: not enough distinct human-bot pairs")
        added: set[tuple[int, int]] = set()
        attempts = 0
        limit = 1000 + 200 * k
        while len(added) < k:
            if attempts >= limit:
                raise DatasetError(f"relation {name!r}: edge sampling failed to converge")
            attempts += 1
            pair = (
                int(humans[rng.integers(0, humans.size)]),
                int(bots[rng.integers(0, bots.size)]),
            )
            if pair in existing or pair in added:
                continue
            added.add(pair)
        stacked = np.vstack([arr, np.asarray(sorted(added), dtype=np.int64).reshape(-1, 2)]) \
            if added else arr
        new_edges.append(stacked)
    return HeteroGraph(
        num_nodes=graph.num_nodes,
        relation_names=graph.relation_names,
        edges=tuple(new_edges),
    )


def split_dataset(ds: Dataset, ratios: tuple[float, float, float], rng: Rng) -> Dataset:
    """Assign train/val/test tags, stratified by class.

    Ratios must be positive and sum to 1; each class needs at least 3
    labeled members.  Unlabeled accounts keep the tag "none".
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise DatasetError("ratios must be 3 positive numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError("ratios must sum to 1")
    split = np.full(ds.n_accounts, "none", dtype="U5")
    for klass in (0, 1):
        members = np.flatnonzero(ds.labels == klass)
        if members.size < 3:
            raise DatasetError(f"class {klass} has fewer than 3 labeled members")
        members = members[rng.permutation(members.size)]
        n_train = int(round(ratios[0] * members.size))
        n_val = int(round(ratios[1] * members.size))
        n_val = min(n_val, members.size - n_train - 1)
        n_train = min(n_train, members.size - n_val - 1)
        split[members[:n_train]] = "train"
        split[members[n_train : n_train + n_val]] = "val"
        split[members[n_train + n_val :]] = "test"
    return replace(ds, split=split)
