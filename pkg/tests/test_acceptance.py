"""Acceptance gate: one PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v -s`` to watch the lines
as they are produced; they are repeated in the terminal summary either way.
"""
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, forward_oracle, ms_loss_oracle, random_layered_graph
from gnntrack import gradcheck, io, metrics, pipeline, synth
from gnntrack.cli import main
from gnntrack.dml import (DmlConfig, Embedder, affinity, hard_pair_count, mine_hard_pairs,
                          multi_similarity_loss, retrieval_metrics, train_dml)
from gnntrack.gnn import GnnConfig, GnnModel, gnn_forward
from gnntrack.graph import build_graph, ds_vector, fit_neighborhood, label_edges
from gnntrack.lineage import build_tracks, detect_mitosis, forest_from_links, resolve_edges

E2E_TRAIN, E2E_HELD_OUT = 5, 2
E2E_BUDGET = 15 * 60


def report(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


# ------------------------------------------------------------------ gradients

def test_gradient_suite():
    rep = gradcheck.run_suite(full_samples=48, seed=0)
    w = rep.worst
    kinks = sum(r.kinks for r in rep.results)
    report("gradient suite", rep.ok and rep.seconds < 120,
           f"{len(rep.results)} tensors, worst rel err {w.max_rel_err:.1e} ({w.name}), "
           f"{kinks} kink probes skipped, {rep.seconds:.1f}s")


# -------------------------------------------------------------------- oracles

def test_equation_oracles():
    rng = np.random.default_rng(7)
    cfg = GnnConfig(L=1)
    model = GnnModel.create(cfg, 128 + 13, seed=7)
    for k, p in model.parameters().items():
        if ".b" in k:
            p.data = rng.normal(scale=0.1, size=p.shape)
    v_dml = rng.normal(size=(3, 128))
    v_st = rng.uniform(size=(3, 13))
    edges = [(0, 1), (0, 2), (1, 2)]
    _, logits = gnn_forward(model, v_dml, v_st, np.array(edges).T)
    err_fwd = float(np.max(np.abs(logits.data.ravel() - forward_oracle(model, v_dml, v_st, edges))))

    err_ds = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 40))
        a, b = rng.normal(size=d), rng.normal(size=d)
        if rng.random() < 0.05:
            a[:] = 0.0
        na = math.sqrt(sum(x * x for x in a))
        nb = math.sqrt(sum(x * x for x in b))
        cos = sum(x * y for x, y in zip(a, b)) / (na * nb) if na and nb else 0.0
        want = [abs(x - y) for x, y in zip(a, b)] + [cos]
        err_ds = max(err_ds, float(np.max(np.abs(ds_vector(a, b) - want))))
    report("equation oracles", err_fwd <= 1e-10 and err_ds <= 1e-12,
           f"L=1 forward max err {err_fwd:.1e}, D-S max err over 1000 pairs {err_ds:.1e}")


# ------------------------------------------------------------------- locality

def _layered(frames, per_frame):
    t = np.repeat(np.arange(frames), per_frame)
    src, dst = np.nonzero(t[None, :] == t[:, None] + 1)
    return t, np.stack([src, dst]).astype(np.int64)


def test_message_passing_locality():
    trials = 100
    details, ok = [], True
    for L in (1, 2, 3):
        frames, per = L + 4, 3
        t, ei = _layered(frames, per)
        t_src = L + 2                       # edge from frame L+2 to L+3
        far_max, near_changed = 0.0, 0
        for trial in range(trials):
            rng = np.random.default_rng(1000 * L + trial)
            model = GnnModel.create(GnnConfig(L=L), 16 + 13, seed=1000 * L + trial)
            v_dml = rng.normal(size=(len(t), 16))
            v_st = rng.uniform(size=(len(t), 13))
            e = int(rng.choice(np.flatnonzero(t[ei[0]] == t_src)))
            base = gnn_forward(model, v_dml, v_st, ei)[1].data[e, 0]
            for offset in (L + 1, L):
                node = int(rng.choice(np.flatnonzero(t == t_src - offset)))
                vd, vs = v_dml.copy(), v_st.copy()
                vd[node] += rng.normal(size=16)
                vs[node] += rng.uniform(size=13)
                delta = abs(gnn_forward(model, vd, vs, ei)[1].data[e, 0] - base)
                if offset == L + 1:
                    far_max = max(far_max, delta)
                else:
                    near_changed += delta > 1e-9
        frac = near_changed / trials
        ok &= far_max <= 1e-9 and frac >= 0.95
        details.append(f"L={L}: max |dlogit| at L+1 {far_max:.1e}, changed at L {frac:.0%}")
    report("message-passing locality", ok, "; ".join(details))


# ----------------------------------------------------------------- inference

def test_inference_invariants():
    bad = 0
    for trial in range(1000):
        rng = np.random.default_rng(trial)
        nodes, ei = random_layered_graph(rng, max_frames=6, max_per_frame=6)
        act = resolve_edges(rng.random(ei.shape[1]), ei)
        n = len(nodes)
        inc = np.bincount(ei[1][act], minlength=n)
        out = np.bincount(ei[0][act], minlength=n)
        forest = build_tracks(act, ei, nodes)
        members = [k for tr in forest.tracks for k in tr.instances]
        partition = sorted(members) == sorted(c.key for c in nodes)
        consecutive = all(np.all(np.diff([k[0] for k in tr.instances]) == 1) for tr in forest.tracks)
        bad += not (inc.max(initial=0) <= 1 and out.max(initial=0) <= 2 and partition and consecutive)
    report("inference invariants", bad == 0, f"{1000 - bad}/1000 random graphs satisfy every bound")


# ------------------------------------------------------------- end to end

def _benchmark(preset, epochs):
    t0 = time.perf_counter()
    seqs = [synth.generate_sequence(synth.preset(preset, seed=100 + s))
            for s in range(E2E_TRAIN + E2E_HELD_OUT)]
    data = [pipeline.training_sequence(s) for s in seqs]
    tracker, _ = pipeline.fit_tracker(data[:E2E_TRAIN], DmlConfig(), GnnConfig(epochs=epochs, stride=2))
    rows = []
    for ts, seq in zip(data[E2E_TRAIN:], seqs[E2E_TRAIN:]):
        res = pipeline.track(tracker, ts.instances)
        gnn = metrics.evaluate(res.forest, seq.forest)
        base = metrics.evaluate(forest_from_links(synth.nearest_centroid_baseline(ts.instances),
                                                  ts.instances), seq.forest)
        rows.append((gnn["aa"], gnn["te"], base["aa"], base["te"]))
    return np.array(rows), time.perf_counter() - t0


@pytest.fixture(scope="module")
def benchmarks():
    desk, t_desk = _benchmark("desk", 15)
    hm, t_hm = _benchmark("high_motion", 8)
    return {"desk": desk, "high_motion": hm, "seconds": t_desk + t_hm}


def test_end_to_end_benchmark(benchmarks):
    desk, hm = benchmarks["desk"], benchmarks["high_motion"]
    desk_ok = bool(np.all(desk[:, 0] >= 0.95) and np.all(desk[:, 1] >= 0.90))
    beats = bool(np.all(hm[:, 0] > hm[:, 2]) and np.all(hm[:, 1] > hm[:, 3]))
    hard = bool(np.all(hm[:, 2] < 0.85))
    fast = benchmarks["seconds"] < E2E_BUDGET

    def fmt(a):
        return "/".join(f"{v:.3f}" for v in a)

    report("end-to-end benchmark", desk_ok and beats and hard and fast,
           f"desk AA {fmt(desk[:, 0])} TE {fmt(desk[:, 1])}; high_motion GNN AA {fmt(hm[:, 0])} "
           f"TE {fmt(hm[:, 1])} vs baseline AA {fmt(hm[:, 2])} TE {fmt(hm[:, 3])}; "
           f"{benchmarks['seconds']:.0f}s")


# ------------------------------------------------------------------------ DML

def test_dml_suite():
    cfg = DmlConfig(epochs=150)
    data = synth.separable_descriptors()
    emb = Embedder.create(cfg, np.random.default_rng(cfg.seed))
    emb.fit_standardizer(data.descriptors)
    before = hard_pair_count(emb, data, cfg)
    train_dml(emb, data, cfg, np.random.default_rng(cfg.seed))
    after = hard_pair_count(emb, data, cfg)
    m = retrieval_metrics(emb(data.descriptors), data.labels)

    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(50):
        e = rng.normal(size=(32, 16))
        e /= np.linalg.norm(e, axis=1, keepdims=True)
        labels = np.repeat(np.arange(8), 4)
        A = affinity(e).data
        pairs = mine_hard_pairs(A, labels, cfg.epsilon)
        got = float(multi_similarity_loss(A, labels, pairs).data)
        want = ms_loss_oracle(A.tolist(), labels.tolist(), pairs.pos.tolist(), pairs.neg.tolist())
        worst = max(worst, abs(got - want))
    report("DML suite", after == 0 and m["p_at_1"] >= 0.9 and worst <= 1e-10,
           f"hard pairs {before} -> {after}, P@1 {m['p_at_1']:.3f}, RP {m['r_precision']:.3f}, "
           f"MAP@R {m['map_at_r']:.3f}, MS loss oracle err {worst:.1e}")


# -------------------------------------------------------------------- mitosis

def _unambiguous(forest, pos, radius):
    """GT divisions whose daughters fall in only their parent's gate and vice versa."""
    by = forest.by_cell
    ends = {}
    for tr in forest.tracks:
        ends.setdefault(tr.t_fin, []).append(tr)
    starts = {}
    for tr in forest.tracks:
        starts.setdefault(tr.t_init, []).append(tr)

    def near(a, b):
        return np.all(np.abs(np.subtract(pos[a], pos[b])) <= radius)

    out = []
    for parent, kids in forest.children().items():
        p = by[parent]
        t = p.t_fin
        last = p.instances[-1]
        firsts = [by[k].instances[0] for k in kids]
        rivals = [e for e in ends.get(t, ()) if e.n != parent
                  and any(near(e.instances[-1], f) for f in firsts)]
        extra = [s for s in starts.get(t + 1, ()) if s.n not in kids and near(s.instances[0], last)]
        if not rivals and not extra:
            out.append((last, tuple(sorted(firsts))))
    return out


def test_mitosis_recovery():
    total, recovered, seqs, divisions = 0, 0, 0, 0
    for seed in range(20, 26):
        seq = synth.generate_sequence(synth.preset("desk", seed=seed, p_divide=0.03))
        insts = pipeline.sequence_instances(seq.frames, seq.cell_of)
        rule = fit_neighborhood([(insts, seq.links)])
        g = build_graph(insts, rule)
        y = label_edges(g, seq.links) > 0
        # keep only same-cell associations: parents must come from triplet matching
        y &= np.array([seq.cell_of[a] == seq.cell_of[b] for a, b in g.edge_keys()])
        pos = {c.key: c.centroid for c in g.nodes}
        forest = detect_mitosis(build_tracks(y, g.edge_index, g.nodes),
                                {c.key: c for c in g.nodes}, rule.radius)
        found = set()
        by = forest.by_cell
        for parent, kids in forest.children().items():
            found.add((by[parent].instances[-1], tuple(sorted(by[k].instances[0] for k in kids))))
        for triplet in _unambiguous(seq.forest, pos, rule.radius):
            total += 1
            recovered += triplet in found
        seqs += 1
        divisions += len(seq.forest.children())
    report("mitosis recovery", total >= 3 and recovered == total,
           f"{recovered}/{total} unambiguous divisions recovered "
           f"({divisions} divisions in {seqs} sequences)")


# ---------------------------------------------------------------- determinism

def _cli_run(root):
    data, model, out = root / "data", root / "model", root / "out"
    fast = ["--set", "dml.epochs=10", "--set", "gnn.epochs=2", "--seed", "3"]
    assert main(["synth", "--preset", "desk", "--count", "2", "--out", str(data), "--seed", "3"]) == 0
    assert main(["train-gnn", "--data", str(data / "seq_000"), "--out", str(model)] + fast) == 0
    assert main(["infer", "--data", str(data / "seq_001"), "--model", str(model / "tracker.json"),
                 "--out", str(out)]) == 0
    assert main(["eval", "--pred", str(out / "tracks.txt"), "--gt", str(data / "seq_001" / io.GT_TRACKS),
                 "--edges", str(out / "edges.csv"), "--out", str(out / "metrics.json")]) == 0
    return out


def test_determinism(tmp_path):
    a, b = _cli_run(tmp_path / "a"), _cli_run(tmp_path / "b")
    names = ["tracks.txt", "tracks_instances.csv", "metrics.json"]
    same = [n for n in names if (a / n).read_bytes() == (b / n).read_bytes()]
    report("determinism", len(same) == len(names),
           f"{len(same)}/{len(names)} output files byte-identical across two full pipeline runs")
