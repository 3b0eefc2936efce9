"""Synthetic data generation, horizontal partitioning, and bias injection.

Labels follow a planted logistic ground truth whose margin is controlled by
``class_separation``; a sensitive group attribute is attached per example with
tunable feature-group correlation. Partitioning is IID shuffle-split or
Dirichlet label skew. Bias is injected either at the data level (group-targeted
label flipping) or at the update level (a multiplicative tag applied by the
server loop at transmission time).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .models import LabeledBatch
from .numeric import RngStream


@dataclass(frozen=True)
class DataSpec:
    n_examples: int = 2000
    n_features: int = 20
    n_classes: int = 2
    n_groups: int = 2
    class_separation: float = 5.0
    group_correlation: float = 0.0

    def __post_init__(self):
        if self.n_examples < 1 or self.n_features < 1:
            raise ValueError("n_examples and n_features must be positive")
        if self.n_classes < 2 or self.n_groups < 2:
            raise ValueError("n_classes and n_groups must be >= 2")
        if self.class_separation <= 0:
            raise ValueError("class_separation must be > 0")
        if not 0.0 <= self.group_correlation <= 1.0:
            raise ValueError("group_correlation must be in [0, 1]")


@dataclass(frozen=True)
class BiasTag:
    """How a client's contribution is distorted. 'clean' means not at all."""

    mode: str = "clean"  # clean | label_flip | update_scale
    flip_prob: float = 0.0
    target_group: int = -1
    factor: float = 1.0


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    batch: LabeledBatch
    bias_tag: BiasTag = BiasTag()


@dataclass(frozen=True)
class PartitionScheme:
    kind: str = "iid"  # iid | dirichlet_label_skew
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ("iid", "dirichlet_label_skew"):
            raise ValueError(f"unknown partition kind {self.kind!r}")
        if self.kind == "dirichlet_label_skew" and self.alpha <= 0:
            raise ValueError("dirichlet alpha must be > 0")


def generate(spec: DataSpec, rng: RngStream):
    """Build (train, test) with a deterministic 80/20 split.

    Features are standardized to zero mean / unit variance using train-split
    statistics only.
    """
    g = rng.generator()
    n, d = spec.n_examples, spec.n_features
    # unit-variance Gaussian clusters whose means sit class_separation apart
    # along planted directions; the class posterior is exactly logistic in X
    y = g.integers(spec.n_classes, size=n).astype(np.int64)
    dirs = g.normal(size=(spec.n_classes, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    if spec.n_classes == 2:
        dirs[0] = -dirs[1]
    X = g.normal(size=(n, d)) + 0.5 * spec.class_separation * dirs[y]

    # group attribute: correlated with a feature projection with prob
    # group_correlation, uniform otherwise
    v = g.normal(size=d)
    v /= np.linalg.norm(v)
    proj = X @ v
    edges = np.quantile(proj, np.linspace(0, 1, spec.n_groups + 1)[1:-1])
    corr_groups = np.searchsorted(edges, proj).astype(np.int64)
    rand_groups = g.integers(spec.n_groups, size=n)
    use_corr = g.random(n) < spec.group_correlation
    groups = np.where(use_corr, corr_groups, rand_groups)

    perm = g.permutation(n)
    n_train = int(round(0.8 * n))
    tr, te = perm[:n_train], perm[n_train:]
    mu = X[tr].mean(axis=0)
    sd = X[tr].std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    X = (X - mu) / sd
    train = LabeledBatch(X[tr], y[tr], groups[tr])
    test = LabeledBatch(X[te], y[te], groups[te])
    return train, test


def partition(train: LabeledBatch, K: int, scheme: PartitionScheme, rng: RngStream):
    """Split train into K disjoint client shards covering every example."""
    n = len(train)
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > n:
        raise ValueError(f"cannot partition {n} examples across {K} clients")
    g = rng.generator()
    if scheme.kind == "iid":
        idx_lists = np.array_split(g.permutation(n), K)
    else:
        idx_lists = _dirichlet_split(train.labels, K, scheme.alpha, g)
    return [
        ClientShard(client_id=i, batch=train.take(np.sort(idx)))
        for i, idx in enumerate(idx_lists)
    ]


def _dirichlet_split(labels: np.ndarray, K: int, alpha: float, g: np.random.Generator):
    """Per-class client proportions from Dirichlet(alpha); resample until every
    client has at least one example."""
    classes = np.unique(labels)
    for _ in range(1000):
        parts = [[] for _ in range(K)]
        for c in classes:
            idx_c = g.permutation(np.flatnonzero(labels == c))
            props = g.dirichlet(np.full(K, alpha))
            cuts = (np.cumsum(props)[:-1] * len(idx_c)).astype(int)
            for k, chunk in enumerate(np.split(idx_c, cuts)):
                parts[k].extend(chunk.tolist())
        if all(len(p) >= 1 for p in parts):
            return [np.asarray(p, dtype=np.int64) for p in parts]
    raise RuntimeError("dirichlet partition failed to give every client data")


def inject_bias(shard: ClientShard, tag: BiasTag, rng: RngStream) -> ClientShard:
    """Apply a bias mode to a clean shard.

    label_flip rewrites labels of the target group before training;
    update_scale only tags the shard, the distortion is applied to the
    transmitted update by the server loop.
    """
    if shard.bias_tag.mode != "clean":
        raise ValueError("inject_bias requires a clean shard")
    if tag.mode == "clean":
        return shard
    if tag.mode == "label_flip":
        if not 0.0 <= tag.flip_prob <= 1.0:
            raise ValueError("flip probability must be in [0, 1]")
        b = shard.batch
        y = b.labels.copy()
        hit = (b.groups == tag.target_group) & (
            rng.generator().random(len(b)) < tag.flip_prob
        )
        n_classes = int(max(2, y.max() + 1))
        if n_classes == 2:
            y[hit] = 1 - y[hit]
        else:
            shift = rng.child("flip-to").generator().integers(1, n_classes, size=len(y))
            y[hit] = (y[hit] + shift[hit]) % n_classes
        return replace(shard, batch=LabeledBatch(b.features, y, b.groups), bias_tag=tag)
    if tag.mode == "update_scale":
        if tag.factor <= 0:
            raise ValueError("update_scale factor must be > 0")
        return replace(shard, bias_tag=tag)
    raise ValueError(f"unknown bias mode {tag.mode!r}")


def export_batch_csv(batch: LabeledBatch, path) -> None:
    """Write a batch as CSV: f0..f{n-1},label,group with 17 significant digits."""
    d = batch.features.shape[1]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"f{j}" for j in range(d)] + ["label", "group"])
        for i in range(len(batch)):
            row = [format(x, ".17g") for x in batch.features[i]]
            wr.writerow(row + [int(batch.labels[i]), int(batch.groups[i])])


def import_batch_csv(path) -> LabeledBatch:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        d = len(header) - 2
        feats, labels, groups = [], [], []
        for row in rd:
            feats.append([float(x) for x in row[:d]])
            labels.append(int(row[d]))
            groups.append(int(row[d + 1]))
    return LabeledBatch(np.asarray(feats), np.asarray(labels), np.asarray(groups))
