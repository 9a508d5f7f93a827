"""Central finite-difference check of every trainable parameter.

Two objectives of the joint model are checked: the weighted edge cross
entropy of the GNN fed by the DML embedder (every parameter), and the
multi-similarity loss of the embedder on a small batch (embedder parameters).
Checking them apart rather than summed keeps the large exponentials of the
similarity loss from swamping the finite differences of GNN weights with
rounding noise. Hard pairs are mined once at the unperturbed point, so both
objectives are smooth in the parameters.

The network is only piecewise smooth (ReLU, absolute value). A probe whose
+-eps evaluations land on a different piece than the base point straddles a
kink, where a central difference measures nothing; such probes are detected
exactly from the branch patterns, reported, and left out of the verdict.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ad
from .dml import DmlConfig, Embedder, affinity, mine_hard_pairs, multi_similarity_loss
from .features import DESCRIPTOR_DIM
from .gnn import GnnConfig, GnnModel, gnn_forward, weighted_ce_with_logits

EPS = 1e-5
TOL = 1e-4
FLOOR = 1e-6   # |g| below this is compared absolutely: FD rounding noise is ~1e-11

SMALL_GNN = GnnConfig(L=6, d_v=4, d_e=6, node_hidden=5, classifier_widths=(5, 3))
SMALL_DML = DmlConfig(d_dml=6, trunk_hidden=(5,))


@dataclass
class TensorCheck:
    name: str
    checked: int
    size: int
    max_rel_err: float
    kinks: int = 0      # probes skipped because they straddle a kink

    @property
    def ok(self):
        return self.checked > 0 and self.max_rel_err < TOL


@dataclass
class GradcheckReport:
    results: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self):
        return bool(self.results) and all(r.ok for r in self.results)

    @property
    def worst(self):
        return max(self.results, key=lambda r: r.max_rel_err)

    def lines(self):
        for r in self.results:
            tag = "ok  " if r.ok else "FAIL"
            kink = f"  ({r.kinks} at kinks)" if r.kinks else ""
            yield (f"{tag} {r.name:36s} {r.checked:6d}/{r.size:<6d} max rel err "
                   f"{r.max_rel_err:.2e}{kink}")


@dataclass
class _Problem:
    embedder: Embedder
    model: GnnModel
    desc: np.ndarray        # node descriptors
    v_st: np.ndarray
    edge_index: np.ndarray
    y: np.ndarray
    mean_degree: float
    batch_desc: np.ndarray
    batch_labels: np.ndarray
    pairs: object = None

    def params(self, objective="ce"):
        if objective == "ms":
            return dict(self.embedder.parameters())
        return {**self.embedder.parameters(), **self.model.parameters()}

    def loss(self, objective="ce"):
        if objective == "ms":
            A = affinity(self.embedder.embed(self.batch_desc))
            if self.pairs is None:
                self.pairs = mine_hard_pairs(A.data, self.batch_labels, SMALL_DML.epsilon)
            return multi_similarity_loss(A, self.batch_labels, self.pairs)
        v = self.embedder.embed(self.desc)
        _, logits = gnn_forward(self.model, v, self.v_st, self.edge_index)
        return weighted_ce_with_logits(logits, self.y, self.mean_degree)


def make_problem(gnn_cfg: GnnConfig, dml_cfg: DmlConfig, seed=0, frames=4, per_frame=3, d_st=13):
    """Small layered graph with random features, complete links between
    consecutive frames, and a DML batch of 4 classes x 3 instances."""
    rng = np.random.default_rng(seed)
    n = frames * per_frame
    t = np.repeat(np.arange(frames), per_frame)
    src, dst = np.nonzero(t[None, :] == t[:, None] + 1)
    edge_index = np.stack([src, dst]).astype(np.int64)
    y = np.zeros(edge_index.shape[1])
    y[(src % per_frame) == (dst % per_frame)] = 1.0
    counts = np.bincount(dst, minlength=n)
    embedder = Embedder.create(dml_cfg, rng)
    embedder.fit_standardizer(rng.normal(size=(50, DESCRIPTOR_DIM)))
    model = GnnModel.create(gnn_cfg, dml_cfg.d_dml + d_st, seed=seed)
    for key, p in {**embedder.parameters(), **model.parameters()}.items():
        if ".b" in key:   # nonzero biases exercise every path
            p.data = rng.normal(scale=0.1, size=p.shape)
    prob = _Problem(
        embedder=embedder, model=model, desc=rng.normal(size=(n, DESCRIPTOR_DIM)),
        v_st=rng.uniform(size=(n, d_st)), edge_index=edge_index, y=y,
        mean_degree=float(counts[counts > 0].mean()),
        batch_desc=rng.normal(size=(12, DESCRIPTOR_DIM)), batch_labels=np.repeat(np.arange(4), 3))
    with ad.no_grad():
        prob.loss("ms")  # fixes the mined pairs
    if prob.pairs.count == 0:
        raise RuntimeError("gradient problem mined no hard pairs; pick another seed")
    return prob


def check_problem(prob: _Problem, samples=None, seed=0, eps=EPS, objective="ce"):
    """Compare taped gradients with central differences.

    ``samples=None`` checks every scalar; an integer checks that many randomly
    chosen entries per tensor (all of them when the tensor is smaller).
    """
    rng = np.random.default_rng(seed)
    params = prob.params(objective)
    with ad.Tape() as tape:
        loss = prob.loss(objective)
    grads = tape.gradient(loss, params)

    def value():
        with ad.no_grad(), ad.record_branches() as branches:
            return float(prob.loss(objective).data), branches

    _, base = value()
    out = []
    for name, p in params.items():
        flat = p.data.reshape(-1)   # view: edits reach the parameter
        g = grads[name].reshape(-1)
        idx = np.arange(flat.size)
        if samples is not None and samples < flat.size:
            idx = np.sort(rng.choice(flat.size, size=samples, replace=False))
        worst, kinks = 0.0, 0
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            fp, bp = value()
            flat[i] = old - eps
            fm, bm = value()
            flat[i] = old
            if bp != base or bm != base:
                kinks += 1
                continue
            fd = (fp - fm) / (2 * eps)
            err = abs(fd - g[i]) / max(abs(fd), abs(g[i]), FLOOR)
            worst = max(worst, err)
        out.append(TensorCheck(f"{objective}:{name}", len(idx) - kinks, flat.size, worst, kinks))
    return out


def run_suite(full_samples=48, seed=0):
    """Exhaustive pass on a narrow L=6 model, sampled pass at default widths."""
    start = time.perf_counter()
    report = GradcheckReport()
    small = make_problem(SMALL_GNN, SMALL_DML, seed=seed)
    full = make_problem(GnnConfig(), DmlConfig(), seed=seed)
    for objective in ("ce", "ms"):
        report.results += [replace(r, name=f"narrow:{r.name}")
                           for r in check_problem(small, None, seed, objective=objective)]
        report.results += [replace(r, name=f"full:{r.name}")
                           for r in check_problem(full, full_samples, seed, objective=objective)]
    report.seconds = time.perf_counter() - start
    return report
