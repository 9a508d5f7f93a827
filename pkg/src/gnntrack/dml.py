"""Appearance embeddings trained with the multi-similarity loss and hard-pair mining."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autograd as ad
from .errors import ConfigError
from .features import DESCRIPTOR_DIM
from .nn import Mlp, collect
from .optim import Adam


@dataclass
class DmlConfig:
    kappa: int = 8
    m: int = 4
    alpha_ms: float = 2.0
    beta_ms: float = 50.0
    lambda_ms: float = 0.5
    epsilon: float = 0.1
    d_dml: int = 128
    trunk_hidden: tuple = (64, 64)
    trunk_lr: float = 1e-5
    head_lr: float = 1e-4
    weight_decay: float = 1e-4
    epochs: int = 40
    batches_per_epoch: int = 25
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["trunk_hidden"] = list(self.trunk_hidden)
        return d


@dataclass
class DmlDataset:
    descriptors: np.ndarray   # (n, DESCRIPTOR_DIM)
    labels: np.ndarray        # biological cell index per row
    frames: np.ndarray        # frame index per row

    @classmethod
    def from_instances(cls, instances, cell_of):
        rows = [c for c in instances if c.key in cell_of]
        return cls(np.stack([c.descriptor for c in rows]),
                   np.array([cell_of[c.key] for c in rows]),
                   np.array([c.t for c in rows]))

    @classmethod
    def concat(cls, parts):
        # offset labels so cells of different sequences stay distinct
        descs, labels, frames = [], [], []
        offset = 0
        for p in parts:
            descs.append(p.descriptors)
            labels.append(p.labels + offset)
            frames.append(p.frames)
            offset += int(p.labels.max()) + 1 if len(p.labels) else 0
        return cls(np.concatenate(descs), np.concatenate(labels), np.concatenate(frames))


@dataclass
class DmlBatch:
    descriptors: np.ndarray
    labels: np.ndarray
    rows: np.ndarray  # indices into the dataset


def sample_batch(dataset: DmlDataset, kappa, m, rng):
    """kappa cells, each contributing m temporally consecutive appearances."""
    by_class = {}
    for i in np.lexsort((dataset.frames, dataset.labels)):
        by_class.setdefault(int(dataset.labels[i]), []).append(i)
    eligible = sorted(c for c, rows in by_class.items() if len(rows) >= m)
    if len(eligible) < kappa:
        raise ConfigError(f"need {kappa} cells with >= {m} instances, found {len(eligible)}")
    chosen = rng.choice(eligible, size=kappa, replace=False)
    rows = []
    for c in chosen:
        members = by_class[int(c)]
        start = int(rng.integers(0, len(members) - m + 1))
        rows.extend(members[start:start + m])
    rows = np.array(rows, dtype=np.int64)
    return DmlBatch(dataset.descriptors[rows], dataset.labels[rows], rows)


@dataclass
class Embedder:
    """Standardise descriptors, trunk MLP, head MLP, unit normalisation."""

    trunk: Mlp
    head: Mlp
    mean: np.ndarray
    scale: np.ndarray
    _params: dict = field(default=None, repr=False)

    @classmethod
    def create(cls, config: DmlConfig, rng, d_in=DESCRIPTOR_DIM):
        sizes = [d_in, *config.trunk_hidden]
        trunk = Mlp.create(sizes, ["relu"] * (len(sizes) - 1), rng, "dml_trunk")
        head = Mlp.create([sizes[-1], config.d_dml], ["none"], rng, "dml_head")
        return cls(trunk, head, np.zeros(d_in), np.ones(d_in))

    def fit_standardizer(self, descriptors):
        self.mean = descriptors.mean(axis=0)
        sd = descriptors.std(axis=0)
        self.scale = np.where(sd > 0, sd, 1.0)

    def parameters(self):
        if self._params is None:
            self._params = collect(self.trunk, self.head)
        return self._params

    def state(self):
        out = {k: p.data for k, p in self.parameters().items()}
        out["dml_std.mean"] = self.mean
        out["dml_std.scale"] = self.scale
        return out

    def load_state(self, arrays):
        for k, p in self.parameters().items():
            p.data = np.array(arrays[k], dtype=np.float64)
        self.mean = np.array(arrays["dml_std.mean"])
        self.scale = np.array(arrays["dml_std.scale"])

    def embed(self, descriptors):
        x = (np.asarray(descriptors, dtype=np.float64) - self.mean) / self.scale
        return ad.l2_normalize(self.head(self.trunk(x)))

    def __call__(self, descriptors):
        with ad.no_grad():
            return self.embed(descriptors).data


def affinity(embeddings, tol=1e-6):
    """Cosine affinity of unit-norm rows: ``E @ E.T``."""
    e = ad.as_tensor(embeddings)
    norms = np.linalg.norm(e.data, axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise FloatingPointError("affinity expects unit-normalised embeddings")
    return e @ e.T


@dataclass
class MinedPairs:
    pos: np.ndarray  # bool (n, n); pos[i, l] -> l is a hard positive of anchor i
    neg: np.ndarray

    @property
    def count(self):
        return int(self.pos.sum() + self.neg.sum())


def mine_hard_pairs(A, labels, epsilon=0.1):
    a = A.data if isinstance(A, ad.Tensor) else np.asarray(A, dtype=np.float64)
    labels = np.asarray(labels)
    if a.shape != (len(labels), len(labels)):
        raise ValueError(f"affinity {a.shape} does not match {len(labels)} labels")
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    diff = labels[:, None] != labels[None, :]
    min_pos = np.where(same, a, np.inf).min(axis=1, keepdims=True)
    max_neg = np.where(diff, a, -np.inf).max(axis=1, keepdims=True)
    neg = diff & (a > min_pos - epsilon)
    pos = same & (a < max_neg + epsilon)
    return MinedPairs(pos, neg)


def multi_similarity_loss(A, labels, pairs: MinedPairs, alpha=2.0, beta=50.0, lam=0.5):
    """Mean over anchors that have mined pairs of the soft positive and negative terms."""
    A = ad.as_tensor(A)
    active = pairs.pos.any(axis=1) | pairs.neg.any(axis=1)
    n_active = int(active.sum())
    if n_active == 0:
        return ad.Tensor(0.0)
    pos_mask = pairs.pos.astype(np.float64)
    neg_mask = pairs.neg.astype(np.float64)
    pos_sum = ad.sum_(ad.exp((A - lam) * (-alpha)) * pos_mask, axis=1)
    neg_sum = ad.sum_(ad.exp((A - lam) * beta) * neg_mask, axis=1)
    per_anchor = ad.log(pos_sum + 1.0) * (1.0 / alpha) + ad.log(neg_sum + 1.0) * (1.0 / beta)
    return ad.sum_(per_anchor) * (1.0 / n_active)


def retrieval_metrics(embeddings, labels):
    """P@1, R-precision and MAP@R under cosine similarity (query excluded)."""
    e = np.asarray(embeddings, dtype=np.float64)
    e = e / np.linalg.norm(e, axis=1, keepdims=True)
    labels = np.asarray(labels)
    sim = e @ e.T
    n = len(labels)
    counts = {c: int((labels == c).sum()) for c in np.unique(labels)}
    p1, rp, mapr = [], [], []
    idx = np.arange(n)
    for q in range(n):
        r = counts[labels[q]] - 1
        if r < 1:
            continue
        others = idx[idx != q]
        order = others[np.lexsort((others, -sim[q, others]))]
        rel = labels[order[:r]] == labels[q]
        p1.append(float(rel[0]))
        rp.append(rel.sum() / r)
        hits = np.cumsum(rel)
        mapr.append(float(np.sum(rel * hits / np.arange(1, r + 1)) / r))
    if not p1:
        raise ValueError("no class has two or more instances")
    return {"p_at_1": float(np.mean(p1)), "r_precision": float(np.mean(rp)),
            "map_at_r": float(np.mean(mapr))}


def batch_loss(embedder, batch, cfg: DmlConfig):
    emb = embedder.embed(batch.descriptors)
    A = affinity(emb)
    pairs = mine_hard_pairs(A, batch.labels, cfg.epsilon)
    return multi_similarity_loss(A, batch.labels, pairs, cfg.alpha_ms, cfg.beta_ms, cfg.lambda_ms), pairs


def train_dml(embedder: Embedder, dataset: DmlDataset, cfg: DmlConfig, rng=None, fit_standardizer=True):
    """Train with separate Adam optimisers for trunk and head. Returns per-epoch
    (mean loss, mean hard-pair count)."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    if fit_standardizer:
        embedder.fit_standardizer(dataset.descriptors)
    trunk_p = embedder.trunk.parameters()
    head_p = embedder.head.parameters()
    opt_trunk = Adam(trunk_p, lr=cfg.trunk_lr, weight_decay=cfg.weight_decay)
    opt_head = Adam(head_p, lr=cfg.head_lr, weight_decay=cfg.weight_decay)
    history = []
    for _ in range(cfg.epochs):
        losses, hard = [], []
        for _ in range(cfg.batches_per_epoch):
            batch = sample_batch(dataset, cfg.kappa, cfg.m, rng)
            with ad.Tape() as tape:
                loss, pairs = batch_loss(embedder, batch, cfg)
            losses.append(float(loss.data))
            hard.append(pairs.count)
            if pairs.count == 0:
                continue
            grads = tape.gradient(loss, {**trunk_p, **head_p})
            opt_trunk.step({k: grads[k] for k in trunk_p})
            opt_head.step({k: grads[k] for k in head_p})
        history.append((float(np.mean(losses)), float(np.mean(hard))))
    return history


def hard_pair_count(embedder, dataset: DmlDataset, cfg: DmlConfig, n_batches=50, rng=None):
    """Total hard pairs mined over ``n_batches`` freshly sampled batches."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed + 1)
    total = 0
    for _ in range(n_batches):
        batch = sample_batch(dataset, cfg.kappa, cfg.m, rng)
        A = affinity(embedder(batch.descriptors))
        total += mine_hard_pairs(A, batch.labels, cfg.epsilon).count
    return total
