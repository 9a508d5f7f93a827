import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gnntrack import autograd as ad
from gnntrack.errors import ConfigError
from gnntrack.features import CellInstance
from gnntrack.graph import (NeighborhoodRule, build_graph, ds_vector, fit_neighborhood,
                            init_embeddings, label_edges, missing_links)
from gnntrack.nn import Mlp


def _cell(t, label, yx, ext=(3, 3)):
    y, x = yx
    return CellInstance(t=t, label=label, centroid=(float(y), float(x)), int_min=1.0, int_max=2.0,
                        int_mean=1.5, area=float(ext[0] * ext[1]),
                        bbox_min=(int(y), int(x)), bbox_max=(int(y) + ext[0] - 1, int(x) + ext[1] - 1),
                        major=2.0, minor=1.0, eccentricity=0.5, descriptor=np.ones(24))


def test_static_cells_use_bbox_term():
    cells = [_cell(t, 1, (5, 5), ext=(10, 10)) for t in (1, 2, 3)]
    links = {((1, 1), (2, 1)), ((2, 1), (3, 1))}
    rule = fit_neighborhood([(cells, links)], alpha=2)
    assert np.array_equal(rule.radius, [20, 20])


def test_displacement_scan_oracle():
    rng = np.random.default_rng(5)
    cells, links = [], set()
    pos = np.array([[20.0, 20.0], [60.0, 60.0]])
    for t in range(1, 8):
        for k in range(2):
            cells.append(_cell(t, k + 1, pos[k], ext=(5, 5)))
            if t > 1:
                links.add(((t - 1, k + 1), (t, k + 1)))
        pos = pos + rng.integers(-7, 8, size=pos.shape)
    pos_of = {c.key: np.array(c.centroid) for c in cells}
    move = np.zeros(2)
    for a, b in links:
        move = np.maximum(move, np.abs(pos_of[b] - pos_of[a]))
    rule = fit_neighborhood([(cells, links)], alpha=2)
    assert np.array_equal(rule.radius, 2 * np.maximum(move, 5))


def test_no_links_warns_and_uses_boxes(caplog):
    cells = [_cell(1, 1, (0, 0), ext=(4, 6))]
    with caplog.at_level(logging.WARNING):
        rule = fit_neighborhood([(cells, set())], alpha=4)
    assert np.array_equal(rule.radius, [16, 24])
    assert "bounding boxes" in caplog.text


def test_radius_must_be_positive():
    with pytest.raises(ConfigError):
        NeighborhoodRule(2.0, [0.0, 1.0])


def test_single_edge_and_gated_pair():
    rule = NeighborhoodRule(2.0, [10.0, 10.0])
    g = build_graph([_cell(1, 1, (0, 0)), _cell(2, 1, (5, 5))], rule)
    assert g.n_edges == 1
    g = build_graph([_cell(1, 1, (0, 0)), _cell(2, 1, (5, 11))], rule)
    assert g.n_edges == 0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_edges_match_all_pairs_oracle(seed):
    rng = np.random.default_rng(seed)
    cells = []
    for t in (1, 2, 3):
        for k in range(rng.integers(0, 7)):
            cells.append(_cell(t, k + 1, rng.uniform(0, 50, size=2)))
    rule = NeighborhoodRule(2.0, rng.uniform(3, 30, size=2))
    g = build_graph(cells, rule)
    expect = []
    for i, a in enumerate(g.nodes):
        for j, b in enumerate(g.nodes):
            if b.t == a.t + 1 and all(abs(b.centroid[d] - a.centroid[d]) <= rule.radius[d] for d in range(2)):
                expect.append((i, j))
    assert [tuple(e) for e in g.edge_index.T.tolist()] == expect
    frames = g.frames
    if g.n_edges:
        assert np.all(frames[g.edge_index[1]] == frames[g.edge_index[0]] + 1)
        assert np.all((g.v_st >= 0) & (g.v_st <= 1))


def test_node_index_follows_frame_then_label():
    cells = [_cell(2, 2, (0, 0)), _cell(1, 3, (0, 0)), _cell(2, 1, (0, 0)), _cell(1, 1, (0, 0))]
    g = build_graph(cells, NeighborhoodRule(2.0, [1.0, 1.0]))
    assert [c.key for c in g.nodes] == [(1, 1), (1, 3), (2, 1), (2, 2)]
    assert [c.index for c in g.nodes] == [0, 1, 2, 3]


def test_density_does_not_reduce_in_degree():
    rng = np.random.default_rng(2)
    rule = NeighborhoodRule(2.0, [15.0, 15.0])

    def cells(n):
        return [_cell(t, k + 1, rng.uniform(0, 100, 2)) for t in (1, 2, 3) for k in range(n)]

    sparse = build_graph(cells(10), rule).mean_in_degree()
    dense = build_graph(cells(20), rule).mean_in_degree()
    assert dense >= sparse


def test_generator_links_survive_the_gate(desk_training):
    rule = fit_neighborhood([(desk_training.instances, desk_training.links)], alpha=2)
    g = build_graph(desk_training.instances, rule)
    y = label_edges(g, desk_training.links)
    assert not missing_links(g, desk_training.links)
    assert y.sum() == len(desk_training.links)
    assert np.bincount(g.edge_index[1][y > 0], minlength=g.n_nodes).max() <= 1


def test_ds_examples():
    assert np.allclose(ds_vector([1, 2], [1, 2]), [0, 0, 1], atol=1e-15)
    assert np.array_equal(ds_vector([1, 0], [0, 1]), [1, 1, 0])
    np.testing.assert_allclose(ds_vector([1, 2, 2], [2, 2, 1]), [1, 0, 1, 8 / 9], rtol=0, atol=1e-15)
    assert np.array_equal(ds_vector([0, 0], [0, 0]), [0, 0, 0])
    with pytest.raises(ConfigError):
        ds_vector([1, 2], [1, 2, 3])


def test_identity_homogenizer_on_one_node():
    v_dml, v_st = np.array([[0.5, -1.0]]), np.array([[0.25]])
    x0, z0 = init_embeddings(v_dml, v_st, Mlp.identity(3), Mlp.identity(4), np.zeros((2, 0), int))
    assert np.array_equal(x0.data, [[0.5, -1.0, 0.25]])
    assert z0.shape == (0, 4)


def test_initial_edge_features_match_composition_oracle():
    rng = np.random.default_rng(9)
    node = Mlp.create([5, 6, 4], ["relu", "none"], rng)
    edge = Mlp.create([5, 7, 3], ["relu", "none"], rng)
    v_dml, v_st = rng.normal(size=(2, 3)), rng.uniform(size=(2, 2))
    x0, z0 = init_embeddings(v_dml, v_st, node, edge, np.array([[0], [1]]))

    def mlp(m, v):
        for W, b, act in zip(m.weights, m.biases, m.activations):
            v = v @ W.data + b.data[0]
            if act == "relu":
                v = np.maximum(v, 0)
        return v

    x_0 = mlp(node, np.concatenate([v_dml[0], v_st[0]]))
    x_1 = mlp(node, np.concatenate([v_dml[1], v_st[1]]))
    np.testing.assert_allclose(z0.data[0], mlp(edge, ds_vector(x_0, x_1)), rtol=0, atol=1e-12)


def test_mismatched_rows_rejected():
    with pytest.raises(ConfigError):
        init_embeddings(np.zeros((2, 2)), np.zeros((3, 1)), Mlp.identity(3), Mlp.identity(4),
                        np.zeros((2, 0), int))


def test_ds_rows_grad_flows():
    xi = ad.Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    xj = ad.Tensor(np.array([[3.0, 1.0]]), requires_grad=True)
    from gnntrack.graph import ds_rows
    with ad.Tape() as tape:
        out = ds_rows(xi, xj).sum()
    gi, gj = tape.gradient(out, [xi, xj])
    assert np.all(np.isfinite(gi)) and np.any(gi != 0)
