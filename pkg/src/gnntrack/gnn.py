"""Edge-oriented message passing network that classifies candidate associations."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autograd as ad
from .errors import ConfigError
from .graph import ds_rows, init_embeddings
from .nn import Mlp, collect
from .optim import Adam

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
LOSSES = ("clamped", "logits")


@dataclass
class GnnConfig:
    L: int = 6
    d_v: int = 32
    d_e: int = 64
    node_hidden: int = 64
    classifier_widths: tuple = (64, 32)
    lr: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 15
    subseq_len: int = 10
    stride: int = 2
    joint_dml: bool = False
    rotate_dml: bool = True     # random orthogonal mixing of V_DML per training step
    loss: str = "clamped"       # "clamped" probabilities or stable "logits"
    seed: int = 0

    def validate(self):
        if self.L < 1:
            raise ConfigError("L must be at least 1")
        if min(self.d_v, self.d_e, self.node_hidden, *self.classifier_widths) < 1:
            raise ConfigError("layer widths must be positive")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")

    def to_dict(self):
        d = asdict(self)
        d["classifier_widths"] = list(self.classifier_widths)
        return d


@dataclass
class EpMpnnBlock:
    f_edge_pdn: Mlp   # d_E -> 1, attention weight of an incoming edge
    f_node_pdn: Mlp   # d_V -> d_V
    f_edge_ee: Mlp    # d_E + 2 d_V + (d_V + 1) -> d_E

    @classmethod
    def create(cls, d_v, d_e, rng, name):
        return cls(
            Mlp.create([d_e, 1], ["sigmoid"], rng, f"{name}.edge_pdn"),
            Mlp.create([d_v, d_v], ["relu"], rng, f"{name}.node_pdn"),
            Mlp.create([d_e + 3 * d_v + 1, d_e], ["relu"], rng, f"{name}.edge_ee"),
        )

    def mlps(self):
        return [self.f_edge_pdn, self.f_node_pdn, self.f_edge_ee]


@dataclass
class GnnModel:
    config: GnnConfig
    d_in: int
    node_mlp: Mlp
    edge_mlp: Mlp
    blocks: list
    classifier: Mlp
    _params: dict = field(default=None, repr=False)

    @classmethod
    def create(cls, config: GnnConfig, d_in, seed=None):
        config.validate()
        rng = np.random.default_rng(config.seed if seed is None else seed)
        dv, de = config.d_v, config.d_e
        node_mlp = Mlp.create([d_in, config.node_hidden, dv], ["relu", "none"], rng, "node_h")
        edge_mlp = Mlp.create([dv + 1, de, de], ["relu", "none"], rng, "edge_h")
        blocks = [EpMpnnBlock.create(dv, de, rng, f"block{l}") for l in range(config.L)]
        widths = [de, *config.classifier_widths, 1]
        acts = ["relu"] * len(config.classifier_widths) + ["sigmoid"]
        classifier = Mlp.create(widths, acts, rng, "classifier")
        return cls(config, d_in, node_mlp, edge_mlp, blocks, classifier)

    def mlps(self):
        out = [self.node_mlp, self.edge_mlp]
        for b in self.blocks:
            out += b.mlps()
        out.append(self.classifier)
        return out

    def parameters(self):
        if self._params is None:
            self._params = collect(*self.mlps())
        return self._params

    def state(self):
        return {k: p.data for k, p in self.parameters().items()}

    def load_state(self, arrays):
        params = self.parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise ConfigError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for k, p in params.items():
            if arrays[k].shape != p.data.shape:
                raise ConfigError(f"{k}: checkpoint shape {arrays[k].shape} != {p.data.shape}")
            p.data = np.array(arrays[k], dtype=np.float64)


def pdn_conv(block: EpMpnnBlock, x_prev, z_cur, edge_index):
    """x_i <- f_node(x_i) + sum over incoming edges (j -> i) of f_edge(z_ji) * f_node(x_j)."""
    src, dst = edge_index
    xt = block.f_node_pdn(x_prev)
    n = xt.shape[0]
    if len(src) == 0:
        return xt
    w = block.f_edge_pdn(z_cur)
    msg = w * ad.take_rows(xt, src)
    return xt + ad.scatter_add_rows(msg, dst, n)


def edge_encode(block: EpMpnnBlock, z_prev, x_new, edge_index):
    """z_ij <- f_ee([z_ij, x_i, x_j, D-S(x_i, x_j)])."""
    src, dst = edge_index
    xi = ad.take_rows(x_new, src)
    xj = ad.take_rows(x_new, dst)
    return block.f_edge_ee(ad.concat([z_prev, xi, xj, ds_rows(xi, xj)], axis=1))


def gnn_forward(model: GnnModel, v_dml, v_st, edge_index):
    """Edge probabilities and pre-sigmoid logits, each shaped (E, 1)."""
    edge_index = np.asarray(edge_index, dtype=np.int64)
    x, z = init_embeddings(v_dml, v_st, model.node_mlp, model.edge_mlp, edge_index)
    for block in model.blocks:
        x = pdn_conv(block, x, z, edge_index)
        z = edge_encode(block, z, x, edge_index)
    logits = model.classifier(z, pre_activation=True)
    return ad.sigmoid(logits), logits


def forward_graph(model, graph, v_dml=None):
    v = graph.v_dml if v_dml is None else v_dml
    if v is None:
        raise ConfigError("graph has no DML embeddings")
    return gnn_forward(model, v, graph.v_st, graph.edge_index)


def class_weights(mean_degree):
    if mean_degree < 1:
        raise ConfigError(f"mean neighbor count must be >= 1, got {mean_degree}")
    return 1.0 / mean_degree, (mean_degree - 1.0) / mean_degree


def weighted_ce_loss(probs, y, mean_degree):
    """Class-weighted binary cross entropy with weights (1/N, (N-1)/N) on
    probabilities clamped to [1e-7, 1 - 1e-7]."""
    w0, w1 = class_weights(mean_degree)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    p = ad.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = (w1 * y) * ad.log(p) + (w0 * (1.0 - y)) * ad.log(1.0 - p)
    return -ad.mean(ll)


def weighted_ce_with_logits(logits, y, mean_degree):
    """Same loss computed from pre-sigmoid logits.

    -log(sigmoid(l)) = softplus(-l) and -log(1 - sigmoid(l)) = softplus(l)
    stay exact when the classifier is confident, where 1 - p loses most of
    its digits, and a confidently wrong edge keeps a gradient instead of
    sitting flat beyond the clamp.
    """
    w0, w1 = class_weights(mean_degree)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    nll = (w1 * y) * ad.softplus(-1.0 * logits) + (w0 * (1.0 - y)) * ad.softplus(logits)
    return ad.mean(nll)


@dataclass
class TrainResult:
    model: GnnModel
    history: list  # mean loss per epoch
    step_losses: list


def train_gnn(model: GnnModel, graphs, embedder=None, config: GnnConfig | None = None,
              seed=0, steps=None, on_epoch=None):
    """Optimise the model end to end on labelled graphs.

    With ``config.joint_dml`` and an ``embedder``, the DML embedder is
    fine-tuned too and embeddings are recomputed from node descriptors.
    With ``config.rotate_dml`` every step sees the embeddings under a fresh
    random rotation, so the network can only use rotation-invariant appearance
    cues (distances and similarities) rather than memorising coordinates.
    ``steps`` caps the total number of updates (default: epochs x graphs).
    """
    cfg = config or model.config
    graphs = [g for g in graphs if g.n_edges > 0]
    if not graphs:
        raise ConfigError("no training graph has candidate edges")
    for g in graphs:
        if g.y is None:
            raise ConfigError("training graphs need ground-truth edge labels")
    joint = cfg.joint_dml and embedder is not None
    params = dict(model.parameters())
    if joint:
        params.update(embedder.parameters())
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(seed)
    total = steps if steps is not None else cfg.epochs * len(graphs)
    history, step_losses = [], []
    epoch_losses = []
    step = 0
    while step < total:
        for gi in rng.permutation(len(graphs)):
            if step >= total:
                break
            g = graphs[gi]
            with ad.Tape() as tape:
                v_dml = embedder.embed(g.descriptors) if joint else g.v_dml
                if cfg.rotate_dml:
                    v_dml = v_dml @ random_rotation(v_dml.shape[1], rng)
                probs, logits = gnn_forward(model, v_dml, g.v_st, g.edge_index)
                if cfg.loss == "logits":
                    loss = weighted_ce_with_logits(logits, g.y, g.mean_in_degree())
                else:
                    loss = weighted_ce_loss(probs, g.y, g.mean_in_degree())
            value = float(loss.data)
            if not np.isfinite(value):
                raise FloatingPointError(
                    f"non-finite loss at step {step} (graph {gi}, {g.n_nodes} nodes, {g.n_edges} edges)")
            grads = tape.gradient(loss, params)
            opt.step(grads)
            step_losses.append(value)
            epoch_losses.append(value)
            step += 1
        history.append(float(np.mean(epoch_losses)))
        if on_epoch is not None:
            on_epoch(len(history), history[-1])
        epoch_losses = []
    return TrainResult(model, history, step_losses)


def random_rotation(d, rng):
    """Haar-distributed orthogonal d x d matrix."""
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


def predict(model, graph, v_dml=None):
    with ad.no_grad():
        probs, _ = forward_graph(model, graph, v_dml)
    return probs.data.ravel()
