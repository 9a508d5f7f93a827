"""Candidate association graph over a sequence and its initial embeddings."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ad
from .errors import ConfigError
from .features import descriptors, minmax_scale, st_table

log = logging.getLogger(__name__)


@dataclass
class NeighborhoodRule:
    alpha: float
    radius: np.ndarray  # per-axis gate

    def __post_init__(self):
        self.radius = np.asarray(self.radius, dtype=np.float64)
        if np.any(self.radius <= 0):
            raise ConfigError(f"neighborhood radius must be positive, got {self.radius}")

    def to_dict(self):
        return {"alpha": self.alpha, "radius": self.radius.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["alpha"]), np.asarray(d["radius"], dtype=np.float64))


def fit_neighborhood(sequences, alpha=2.0):
    """Per-axis gate ``alpha * max(largest bbox extent, largest GT step)``.

    ``sequences`` is an iterable of ``(instances, links)`` where ``links`` are
    ground-truth ((t, label), (t + 1, label)) pairs.
    """
    bbox = None
    move = None
    for instances, links in sequences:
        by_key = {c.key: c for c in instances}
        for c in instances:
            if c.bbox_min is None:
                continue
            ext = np.array(c.bbox_max, float) - np.array(c.bbox_min, float) + 1.0
            bbox = ext if bbox is None else np.maximum(bbox, ext)
        for a, b in links:
            if a in by_key and b in by_key:
                d = np.abs(np.array(by_key[b].centroid) - np.array(by_key[a].centroid))
                move = d if move is None else np.maximum(move, d)
    if move is None:
        log.warning("no ground-truth associations: neighborhood uses bounding boxes only")
        if bbox is None:
            raise ConfigError("cannot fit a neighborhood without boxes or associations")
        return NeighborhoodRule(alpha, alpha * bbox)
    if bbox is None:
        bbox = np.zeros_like(move)
    return NeighborhoodRule(alpha, alpha * np.maximum(bbox, move))


@dataclass
class TrackedGraph:
    nodes: list                 # CellInstance, node i == nodes[i]
    edge_index: np.ndarray      # (2, E) int64 source/target node indices
    v_st: np.ndarray = None     # min-max scaled spatio-temporal features
    st_names: list = field(default_factory=list)
    v_dml: np.ndarray = None    # learned appearance embeddings
    y: np.ndarray = None        # ground-truth edge labels, when known

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_edges(self):
        return self.edge_index.shape[1]

    @property
    def frames(self):
        return np.array([c.t for c in self.nodes], dtype=np.int64)

    @property
    def descriptors(self):
        return descriptors(self.nodes)

    def mean_in_degree(self):
        """Average number of incoming candidates over nodes that have any."""
        if self.n_edges == 0:
            return 1.0
        counts = np.bincount(self.edge_index[1], minlength=self.n_nodes)
        return float(counts[counts > 0].mean())

    def edge_keys(self):
        src, dst = self.edge_index
        return [(self.nodes[s].key, self.nodes[d].key) for s, d in zip(src, dst)]


def order_nodes(instances):
    """Sort by (frame, label) and assign consecutive global indices."""
    nodes = sorted(instances, key=lambda c: (c.t, c.label))
    for i, c in enumerate(nodes):
        c.index = i
    return nodes


def build_graph(instances, rule: NeighborhoodRule):
    """Connect consecutive-frame instances whose centroids pass the per-axis gate."""
    nodes = order_nodes(instances)
    if not nodes:
        return TrackedGraph(nodes, np.zeros((2, 0), dtype=np.int64))
    frames = np.array([c.t for c in nodes])
    cents = np.array([c.centroid for c in nodes], dtype=np.float64)
    src_all, dst_all = [], []
    for t in np.unique(frames):
        a = np.flatnonzero(frames == t)
        b = np.flatnonzero(frames == t + 1)
        if b.size == 0:
            continue
        diff = np.abs(cents[a][:, None, :] - cents[b][None, :, :])
        ok = np.all(diff <= rule.radius, axis=2)
        ia, ib = np.nonzero(ok)
        src_all.append(a[ia])
        dst_all.append(b[ib])
    if src_all:
        src = np.concatenate(src_all)
        dst = np.concatenate(dst_all)
        order = np.lexsort((dst, src))
        edge_index = np.stack([src[order], dst[order]]).astype(np.int64)
    else:
        edge_index = np.zeros((2, 0), dtype=np.int64)
    g = TrackedGraph(nodes, edge_index)
    if nodes:
        table = minmax_scale(st_table(nodes))
        g.v_st, g.st_names = table.values, table.names
    return g


def label_edges(graph: TrackedGraph, links):
    """Y[e] = 1 when the edge is a ground-truth association (same cell or mitosis)."""
    links = set(links)
    graph.y = np.array([1.0 if k in links else 0.0 for k in graph.edge_keys()])
    return graph.y


def missing_links(graph: TrackedGraph, links):
    """Ground-truth links between graph nodes that the gate pruned."""
    keys = {c.key for c in graph.nodes}
    have = set(graph.edge_keys())
    return {l for l in links if l[0] in keys and l[1] in keys and l not in have}


def subsequence_graphs(instances, rule, length=10, stride=1):
    """Graphs over sliding windows of ``length`` frames."""
    frames = sorted({c.t for c in instances})
    if not frames:
        return []
    t0, t1 = frames[0], frames[-1]
    starts = list(range(t0, max(t1 - length + 1, t0) + 1, stride))
    out = []
    for s in starts:
        window = [c for c in instances if s <= c.t < s + length]
        out.append(build_graph(_copy_nodes(window), rule))
    return out


def _copy_nodes(instances):
    return [copy.copy(c) for c in instances]


# ---------------------------------------------------------------- D-S block

def ds_vector(vi, vj):
    """``[|vi - vj|, cos(vi, vj)]`` with cosine 0 when either vector is zero."""
    vi = np.asarray(vi, dtype=np.float64)
    vj = np.asarray(vj, dtype=np.float64)
    if vi.shape != vj.shape:
        raise ConfigError(f"D-S inputs differ in length: {vi.shape} vs {vj.shape}")
    ni, nj = np.linalg.norm(vi), np.linalg.norm(vj)
    cos = float(vi @ vj / (ni * nj)) if ni > 0 and nj > 0 else 0.0
    return np.concatenate([np.abs(vi - vj), [cos]])


def ds_rows(xi, xj):
    """Taped row-wise D-S block over two (E, d) tensors, giving (E, d + 1)."""
    return ad.concat([ad.abs_(xi - xj), ad.cosine_rows(xi, xj)], axis=1)


def init_embeddings(v_dml, v_st, node_mlp, edge_mlp, edge_index):
    """Initial node features X0 = node_mlp([V_DML, V_ST]) and edge features
    Z0 = edge_mlp(D-S(X0[src], X0[dst]))."""
    v_dml = ad.as_tensor(v_dml)
    v_st = ad.as_tensor(v_st)
    if v_dml.shape[0] != v_st.shape[0]:
        raise ConfigError(f"{v_dml.shape[0]} DML rows vs {v_st.shape[0]} ST rows")
    x0 = node_mlp(ad.concat([v_dml, v_st], axis=1))
    src, dst = edge_index
    z0 = edge_mlp(ds_rows(ad.take_rows(x0, src), ad.take_rows(x0, dst)))
    return x0, z0
