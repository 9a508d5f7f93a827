import math

import numpy as np
import pytest

from gnntrack import synth
from gnntrack.features import CellInstance
from gnntrack.pipeline import training_sequence


def central_diff(f, arr, eps=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        fp = f()
        arr[i] = old - eps
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_error(a, b, floor=1e-6):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _np_mlp(mlp, x, pre_activation=False):
    h = np.asarray(x, float)
    last = len(mlp.weights) - 1
    for k, (w, b, act) in enumerate(zip(mlp.weights, mlp.biases, mlp.activations)):
        h = h @ w.data + b.data
        if k == last and pre_activation:
            break
        if act == "relu":
            h = np.maximum(h, 0)
        elif act == "sigmoid":
            h = 1 / (1 + np.exp(-h))
    return h


def _ds(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    cos = a @ b / (na * nb) if na > 0 and nb > 0 else 0.0
    return np.concatenate([np.abs(a - b), [cos]])


def forward_oracle(model, v_dml, v_st, edges):
    """Edge-by-edge, node-by-node evaluation of the whole network."""
    x = [_np_mlp(model.node_mlp, np.concatenate([v_dml[i], v_st[i]])[None])[0] for i in range(len(v_dml))]
    z = [_np_mlp(model.edge_mlp, _ds(x[s], x[d])[None])[0] for s, d in edges]
    for blk in model.blocks:
        xt = [_np_mlp(blk.f_node_pdn, xi[None])[0] for xi in x]
        new_x = [v.copy() for v in xt]
        for e, (s, d) in enumerate(edges):
            w = _np_mlp(blk.f_edge_pdn, z[e][None])[0, 0]
            new_x[d] = new_x[d] + w * xt[s]
        x = new_x
        z = [_np_mlp(blk.f_edge_ee, np.concatenate([z[e], x[s], x[d], _ds(x[s], x[d])])[None])[0]
             for e, (s, d) in enumerate(edges)]
    return np.array([_np_mlp(model.classifier, ze[None], pre_activation=True)[0, 0] for ze in z])


def random_layered_graph(rng, max_frames=5, max_per_frame=5, p_edge=0.6):
    frames = [int(rng.integers(1, max_per_frame + 1)) for _ in range(int(rng.integers(1, max_frames + 1)))]
    nodes = [CellInstance(t + 1, k + 1, tuple(rng.uniform(0, 50, 2)), 0.0, 1.0, 0.5) for t, n in enumerate(frames) for k in range(n)]
    for i, c in enumerate(nodes):
        c.index = i
    edges = [(i, j) for i, a in enumerate(nodes) for j, b in enumerate(nodes)
             if b.t == a.t + 1 and rng.random() < p_edge]
    ei = np.array(edges, dtype=np.int64).T.reshape(2, -1)
    return nodes, ei


def ms_loss_oracle(A, labels, pos, neg, alpha=2.0, beta=50.0, lam=0.5):
    total, anchors = 0.0, 0
    n = len(labels)
    for i in range(n):
        ps = [A[i][l] for l in range(n) if pos[i][l]]
        ns = [A[i][r] for r in range(n) if neg[i][r]]
        if not ps and not ns:
            continue
        anchors += 1
        total += math.log(1 + sum(math.exp(-alpha * (s - lam)) for s in ps)) / alpha
        total += math.log(1 + sum(math.exp(beta * (s - lam)) for s in ns)) / beta
    return total / anchors if anchors else 0.0



@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_sequence():
    return synth.generate_sequence(synth.preset("tiny", seed=3, p_divide=0.1))


@pytest.fixture(scope="session")
def desk_sequence():
    return synth.generate_sequence(synth.preset("desk", seed=11))


@pytest.fixture(scope="session")
def desk_training(desk_sequence):
    return training_sequence(desk_sequence)


# acceptance verdicts, echoed once more at the end of the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
