"""End-to-end glue: features -> DML -> graphs -> GNN -> lineage."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .dml import DmlConfig, DmlDataset, Embedder, train_dml
from .errors import ConfigError
from .features import extract_st_features
from .gnn import GnnConfig, GnnModel, predict, train_gnn
from .graph import (NeighborhoodRule, build_graph, fit_neighborhood, label_edges,
                    missing_links, subsequence_graphs)
from .lineage import build_tracks, detect_mitosis, resolve_edges

log = logging.getLogger(__name__)


@dataclass
class TrainingSequence:
    instances: list
    cell_of: dict
    links: set


def sequence_instances(frames, cell_of=None, masks=True):
    out = []
    for f in frames:
        out.extend(extract_st_features(f, masks=masks))
    if cell_of is not None:
        for c in out:
            c.gt_cell = cell_of.get(c.key)
    return out


def training_sequence(seq):
    """Wrap a generated :class:`~gnntrack.synth.Sequence` for training."""
    return TrainingSequence(sequence_instances(seq.frames, seq.cell_of), seq.cell_of, seq.links)


def labelled_sequence(frames, forest):
    """Training sequence from frames plus a ground-truth forest (e.g. read from disk)."""
    cell_of = forest.cell_of()
    return TrainingSequence(sequence_instances(frames, cell_of), cell_of, forest.links())


@dataclass
class Tracker:
    embedder: Embedder
    model: GnnModel
    rule: NeighborhoodRule
    threshold: float = 0.5
    dml_config: DmlConfig = field(default_factory=DmlConfig)

    def save(self, path, extra_meta=None):
        tensors = {**self.embedder.state(), **self.model.state()}
        meta = {"gnn": self.model.config.to_dict(), "dml": self.dml_config.to_dict(),
                "d_in": self.model.d_in, "rule": self.rule.to_dict(), "threshold": self.threshold}
        meta.update(extra_meta or {})
        checkpoint.save(path, tensors, meta)

    @classmethod
    def load(cls, path):
        tensors, meta = checkpoint.load(path)
        if "gnn" not in meta:
            raise ConfigError(f"{path} is not a tracker checkpoint")
        gcfg = dict(meta["gnn"])
        gcfg["classifier_widths"] = tuple(gcfg["classifier_widths"])
        gnn_cfg = GnnConfig(**gcfg)
        dml_cfg = _dml_config(meta["dml"])
        embedder = Embedder.create(dml_cfg, np.random.default_rng(0))
        embedder.load_state(tensors)
        model = GnnModel.create(gnn_cfg, meta["d_in"])
        model.load_state(tensors)
        return cls(embedder, model, NeighborhoodRule.from_dict(meta["rule"]),
                   meta.get("threshold", 0.5), dml_cfg)


def _dml_config(d):
    d = dict(d)
    d["trunk_hidden"] = tuple(d["trunk_hidden"])
    return DmlConfig(**d)


def save_embedder(path, embedder, cfg: DmlConfig, extra_meta=None):
    checkpoint.save(path, embedder.state(), {"dml": cfg.to_dict(), **(extra_meta or {})})


def load_embedder(path):
    tensors, meta = checkpoint.load(path)
    if "dml" not in meta:
        raise ConfigError(f"{path} is not an embedder checkpoint")
    cfg = _dml_config(meta["dml"])
    embedder = Embedder.create(cfg, np.random.default_rng(0))
    missing = set(embedder.state()) - set(tensors)
    if missing:
        raise ConfigError(f"{path} lacks {sorted(missing)[:3]}")
    embedder.load_state(tensors)
    return embedder, cfg


def fit_embedder(train, cfg: DmlConfig):
    data = DmlDataset.concat([DmlDataset.from_instances(s.instances, s.cell_of) for s in train])
    embedder = Embedder.create(cfg, np.random.default_rng(cfg.seed))
    history = train_dml(embedder, data, cfg, np.random.default_rng(cfg.seed))
    return embedder, history


def training_graphs(train, rule, embedder, cfg: GnnConfig):
    graphs = []
    for s in train:
        for g in subsequence_graphs(s.instances, rule, cfg.subseq_len, cfg.stride):
            if g.n_edges == 0:
                continue
            label_edges(g, s.links)
            lost = missing_links(g, s.links)
            if lost:
                log.warning("%d ground-truth links fall outside the neighborhood gate", len(lost))
            g.v_dml = embedder(g.descriptors)
            graphs.append(g)
    return graphs


def fit_tracker(train, dml_cfg=None, gnn_cfg=None, alpha=2.0, embedder=None, on_epoch=None,
                threshold=0.5):
    """Train the embedder (unless given) and the GNN on labelled sequences."""
    dml_cfg = dml_cfg or DmlConfig()
    gnn_cfg = gnn_cfg or GnnConfig()
    if not train:
        raise ConfigError("no training sequences")
    rule = fit_neighborhood([(s.instances, s.links) for s in train], alpha)
    if embedder is None:
        embedder, _ = fit_embedder(train, dml_cfg)
    graphs = training_graphs(train, rule, embedder, gnn_cfg)
    d_in = graphs[0].v_dml.shape[1] + graphs[0].v_st.shape[1]
    model = GnnModel.create(gnn_cfg, d_in)
    result = train_gnn(model, graphs, embedder, gnn_cfg, seed=gnn_cfg.seed, on_epoch=on_epoch)
    return Tracker(embedder, model, rule, threshold, dml_cfg), result


@dataclass
class TrackingResult:
    forest: object
    graph: object
    probs: np.ndarray
    active: np.ndarray


def track(tracker: Tracker, instances):
    """Build the whole-sequence graph, classify its edges and assemble the lineage."""
    g = build_graph(instances, tracker.rule)
    if g.n_nodes == 0:
        raise ConfigError("sequence has no cell instances")
    g.v_dml = tracker.embedder(g.descriptors)
    probs = predict(tracker.model, g) if g.n_edges else np.zeros(0)
    active = resolve_edges(probs, g.edge_index, tracker.threshold)
    forest = build_tracks(active, g.edge_index, g.nodes)
    forest = detect_mitosis(forest, {c.key: c for c in g.nodes}, tracker.rule.radius)
    return TrackingResult(forest, g, probs, active)
