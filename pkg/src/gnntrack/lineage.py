"""From edge probabilities to trajectories and lineage trees."""
from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Trajectory:
    n: int
    parent: int
    t_init: int
    t_fin: int
    instances: list = field(default_factory=list)  # (t, label) keys in frame order

    def validate(self):
        if not 1 <= self.t_init <= self.t_fin:
            raise ValueError(f"track {self.n}: bad span {self.t_init}..{self.t_fin}")
        frames = [k[0] for k in self.instances]
        if frames != list(range(self.t_init, self.t_fin + 1)):
            raise ValueError(f"track {self.n}: frames are not consecutive")
        if self.parent == self.n or (self.parent and self.parent > self.n):
            raise ValueError(f"track {self.n}: invalid parent {self.parent}")


@dataclass
class LineageForest:
    tracks: list

    def __post_init__(self):
        self.tracks = sorted(self.tracks, key=lambda tr: tr.n)

    @property
    def by_cell(self):
        return {tr.n: tr for tr in self.tracks}

    def children(self):
        out = defaultdict(list)
        for tr in self.tracks:
            if tr.parent:
                out[tr.parent].append(tr.n)
        return dict(out)

    def cell_of(self):
        """(t, label) -> cell index."""
        return {key: tr.n for tr in self.tracks for key in tr.instances}

    def links(self):
        """Frame-to-frame associations, including parent-to-daughter links."""
        by = self.by_cell
        out = set()
        for tr in self.tracks:
            out.update(zip(tr.instances[:-1], tr.instances[1:]))
            if tr.parent and tr.parent in by:
                out.add((by[tr.parent].instances[-1], tr.instances[0]))
        return out

    def validate(self, n_instances=None):
        seen = set()
        by = self.by_cell
        for tr in self.tracks:
            tr.validate()
            for key in tr.instances:
                if key in seen:
                    raise ValueError(f"instance {key} in more than one track")
                seen.add(key)
            if tr.parent:
                par = by.get(tr.parent)
                if par is None:
                    raise ValueError(f"track {tr.n}: unknown parent {tr.parent}")
                if par.t_fin >= tr.t_init:
                    raise ValueError(f"track {tr.n}: parent ends at {par.t_fin}, child starts {tr.t_init}")
        if n_instances is not None and len(seen) != n_instances:
            raise ValueError(f"forest covers {len(seen)} of {n_instances} instances")


# --------------------------------------------------------------------------- edges

def resolve_edges(probs, edge_index, threshold=0.5):
    """Boolean mask of active edges after conflict resolution.

    Edges above ``threshold`` are candidates; each source keeps its two most
    probable outgoing candidates, then each target keeps its single most
    probable incoming one. Ties go to the smaller (source, target).
    """
    probs = np.asarray(probs, dtype=np.float64)
    src, dst = np.asarray(edge_index[0]), np.asarray(edge_index[1])
    active = np.zeros(len(probs), dtype=bool)
    cand = np.flatnonzero(probs > threshold)
    if cand.size == 0:
        return active
    order = cand[np.lexsort((dst[cand], src[cand], -probs[cand]))]
    out_count = defaultdict(int)
    kept = []
    for e in order:
        if out_count[src[e]] < 2:
            out_count[src[e]] += 1
            kept.append(e)
    taken = set()
    for e in kept:  # already in descending-probability order
        if dst[e] not in taken:
            taken.add(dst[e])
            active[e] = True
    return active


# -------------------------------------------------------------------------- tracks

def build_tracks(active, edge_index, instances):
    """Chain active edges into trajectories.

    ``instances`` is the node list (node i is ``instances[i]``). A node with two
    active outgoing edges ends its trajectory and its two successors start
    new ones parented to it. Cell indices follow (t_init, first centroid).
    """
    src = np.asarray(edge_index[0])[np.asarray(active, dtype=bool)]
    dst = np.asarray(edge_index[1])[np.asarray(active, dtype=bool)]
    n = len(instances)
    succ = defaultdict(list)
    pred = {}
    for s, d in zip(src.tolist(), dst.tolist()):
        succ[s].append(d)
        if d in pred:
            raise AssertionError(f"node {d} has more than one active incoming edge")
        pred[d] = s
    if any(len(v) > 2 for v in succ.values()):
        raise AssertionError("a node has more than two active outgoing edges")

    chains = []
    chain_of = {}
    for i in sorted(range(n), key=lambda i: instances[i].t):
        if i in pred and len(succ[pred[i]]) == 1:
            continue  # continuation of an existing chain
        chain = [i]
        while len(succ.get(chain[-1], ())) == 1:
            chain.append(succ[chain[-1]][0])
        for j in chain:
            chain_of[j] = len(chains)
        chains.append(chain)

    order = sorted(range(len(chains)),
                   key=lambda c: (instances[chains[c][0]].t, instances[chains[c][0]].centroid,
                                  instances[chains[c][0]].label))
    number = {c: k + 1 for k, c in enumerate(order)}
    tracks = []
    for c in order:
        chain = chains[c]
        head = chain[0]
        parent = 0
        if head in pred and len(succ[pred[head]]) == 2:
            parent = number[chain_of[pred[head]]]
        tracks.append(Trajectory(
            n=number[c], parent=parent,
            t_init=instances[head].t, t_fin=instances[chain[-1]].t,
            instances=[instances[j].key for j in chain]))
    return LineageForest(tracks)


def detect_mitosis(forest, instances_by_key, radius):
    """Assign parents to unparented track pairs that start right after a track ends.

    A triplet (k, l, m) qualifies when k and l start at ``t_fin(m) + 1`` and
    both their first centroids lie within ``radius`` (per axis) of m's last
    centroid. Triplets are taken greedily by summed centroid distance; each
    ending track is used once.
    """
    radius = np.asarray(radius, dtype=np.float64)
    tracks = forest.by_cell
    has_children = set(forest.children())
    starts = defaultdict(list)
    ends = defaultdict(list)
    for tr in forest.tracks:
        if tr.parent == 0 and tr.t_init > 1:
            starts[tr.t_init].append(tr)
        if tr.n not in has_children:
            ends[tr.t_fin].append(tr)

    def pos(key):
        return np.asarray(instances_by_key[key].centroid, dtype=np.float64)

    cands = []
    for t0, group in starts.items():
        for m in ends.get(t0 - 1, ()):
            pm = pos(m.instances[-1])
            near = []
            for k in group:
                d = pos(k.instances[0]) - pm
                if np.all(np.abs(d) <= radius):
                    near.append((k, float(np.linalg.norm(d))))
            for (k, dk), (l, dl) in itertools.combinations(near, 2):
                cands.append((dk + dl, m.n, min(k.n, l.n), max(k.n, l.n)))
    cands.sort()
    used = set()
    parent = {}
    for _, m, k, l in cands:
        if m in used or k in parent or l in parent:
            continue
        if m > k or m > l:
            continue  # cannot happen with (t_init, ...) numbering; keeps parent < child
        used.add(m)
        parent[k] = parent[l] = m
    new = [Trajectory(tr.n, parent.get(tr.n, tr.parent), tr.t_init, tr.t_fin, list(tr.instances))
           for tr in tracks.values()]
    return LineageForest(new)


def links_from_forest(forest):
    return forest.links()


def forest_from_links(links, instances):
    """Trajectories implied by a set of ((t, label), (t + 1, label)) links.

    The links must already satisfy the resolver bounds (one incoming, at most
    two outgoing per instance).
    """
    nodes = sorted(instances, key=lambda c: (c.t, c.label))
    index = {c.key: i for i, c in enumerate(nodes)}
    pairs = sorted((index[a], index[b]) for a, b in links)
    edge_index = np.array(pairs, dtype=np.int64).T.reshape(2, -1)
    return build_tracks(np.ones(edge_index.shape[1], dtype=bool), edge_index, nodes)
