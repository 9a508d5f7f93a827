"""Synthetic fluorescence-like sequences with full lineage ground truth."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from .features import FrameRecord
from .lineage import LineageForest, Trajectory

log = logging.getLogger(__name__)


@dataclass
class SynthConfig:
    shape: tuple = (256, 256)
    T: int = 30
    n_cells: int = 15
    p_divide: float = 0.02
    p_exit: float = 0.0
    p_enter: float = 0.0
    step_sigma: float = 1.5
    drift_speed: float = 1.5
    max_step: float = 8.0
    radius_range: tuple = (6.0, 10.0)
    intensity_range: tuple = (500.0, 3500.0)
    intensity_drift: float = 0.01
    texture_range: tuple = (0.02, 0.25)
    background: float = 100.0
    noise_sigma: float = 20.0
    min_age_divide: int = 3
    daughter_jitter: float = 0.25
    allow_overlap: bool = False
    seed: int = 0

    def validate(self):
        for name in ("p_divide", "p_exit", "p_enter"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} is not a probability")
        if self.radius_range[0] < 1 or self.radius_range[1] < self.radius_range[0]:
            raise ValueError(f"bad radius range {self.radius_range}")
        if self.T < 1 or self.n_cells < 0:
            raise ValueError("T must be >= 1 and n_cells >= 0")
        if len(self.shape) != 2:
            raise ValueError("the generator renders 2D frames")


PRESETS = {
    "desk": {},
    "high_motion": {"n_cells": 60, "step_sigma": 8.0, "drift_speed": 12.0, "max_step": 26.0,
                    "radius_range": (3.0, 5.0)},
    "tiny": {"shape": (96, 96), "T": 10, "n_cells": 5, "radius_range": (4.0, 6.0)},
}


def preset(name, **overrides):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kw = dict(PRESETS[name])
    kw.update(overrides)
    return SynthConfig(**kw)


@dataclass
class _Cell:
    n: int
    pos: np.ndarray
    axes: np.ndarray  # semi-axes (a, b)
    angle: float
    intensity: float
    texture: float
    velocity: np.ndarray
    born: int

    @property
    def radius(self):
        return float(self.axes.max())


@dataclass
class Sequence:
    frames: list
    forest: LineageForest
    config: SynthConfig = None
    cell_of: dict = field(default_factory=dict)  # (t, label) -> cell index

    @property
    def links(self):
        return self.forest.links()


def generate_sequence(cfg: SynthConfig) -> Sequence:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    H, W = cfg.shape
    next_id = [1]
    tracks = {}

    def new_id():
        n = next_id[0]
        next_id[0] += 1
        return n

    def fits(pos, r, others):
        if not (r + 1 <= pos[0] <= H - 2 - r and r + 1 <= pos[1] <= W - 2 - r):
            return False
        f = 0.8 if cfg.allow_overlap else 1.0
        for q, rq in others:
            if np.hypot(*(pos - q)) < f * (r + rq) + 2.0:
                return False
        return True

    def spawn(t, others):
        lo, hi = cfg.radius_range
        a = rng.uniform(lo, hi)
        axes = np.array([a, a * rng.uniform(0.65, 1.0)])
        for _ in range(200):
            pos = rng.uniform([0, 0], [H, W])
            if fits(pos, axes.max(), others):
                break
        else:
            return None
        return _Cell(new_id(), pos, axes, rng.uniform(0, np.pi), rng.uniform(*cfg.intensity_range),
                     rng.uniform(*cfg.texture_range), _drift(rng, cfg.drift_speed), t)

    cells = []
    for _ in range(cfg.n_cells):
        c = spawn(1, [(x.pos, x.radius) for x in cells])
        if c is None:
            log.warning("overcrowded: placed %d of %d initial cells", len(cells), cfg.n_cells)
            break
        cells.append(c)
        tracks[c.n] = Trajectory(c.n, 0, 1, 1)

    frames = []
    cell_of = {}
    frames.append(_render(1, cells, cfg, rng, tracks, cell_of))
    for t in range(2, cfg.T + 1):
        placed = []
        survivors = []
        for idx, c in enumerate(cells):
            pending = [(x.pos, x.radius) for x in cells[idx + 1:]]
            if cfg.p_exit and rng.random() < cfg.p_exit:
                continue
            if t - c.born >= cfg.min_age_divide and rng.random() < cfg.p_divide:
                kids = _divide(c, t, rng, cfg, placed + pending, fits, new_id)
                if kids is not None:
                    for k in kids:
                        tracks[k.n] = Trajectory(k.n, c.n, t, t)
                        placed.append((k.pos, k.radius))
                        survivors.append(k)
                    continue
            _move(c, rng, cfg, placed + pending, fits)
            c.intensity *= float(np.exp(rng.normal(0.0, cfg.intensity_drift)))
            c.angle += rng.normal(0.0, 0.05)
            placed.append((c.pos, c.radius))
            survivors.append(c)
        if cfg.p_enter and rng.random() < cfg.p_enter:
            c = spawn(t, placed)
            if c is None:
                log.warning("overcrowded at frame %d: entry skipped", t)
            else:
                survivors.append(c)
                tracks[c.n] = Trajectory(c.n, 0, t, t)
        cells = survivors
        frames.append(_render(t, cells, cfg, rng, tracks, cell_of))

    for tr in tracks.values():
        tr.instances.sort()
        tr.t_fin = tr.instances[-1][0]
    forest = LineageForest(list(tracks.values()))
    forest.validate(n_instances=len(cell_of))
    return Sequence(frames, forest, cfg, cell_of)


def _drift(rng, speed):
    ang = rng.uniform(0, 2 * np.pi)
    return rng.uniform(0, speed) * np.array([np.cos(ang), np.sin(ang)])


def _move(c, rng, cfg, others, fits):
    for _ in range(50):
        step = c.velocity + rng.normal(0.0, cfg.step_sigma, size=2)
        if np.any(np.abs(step) > cfg.max_step):
            continue
        if fits(c.pos + step, c.radius, others):
            c.pos = c.pos + step
            return
        # bounce: turn the drift around when blocked
        if rng.random() < 0.2:
            c.velocity = -c.velocity
    # staying put never collides: earlier movers were checked against this position


def _divide(c, t, rng, cfg, others, fits, new_id):
    ang = rng.uniform(0, np.pi)
    axes = np.maximum(c.axes * 0.75, 1.0)
    off = min(c.radius * 0.75 + 1.0, cfg.max_step)
    u = np.array([np.cos(ang), np.sin(ang)])
    p1, p2 = c.pos + off * u, c.pos - off * u
    r = float(axes.max())
    if not (fits(p1, r, others) and fits(p2, r, others + [(p1, r)])):
        return None
    kids = []
    for p, sgn in ((p1, 1.0), (p2, -1.0)):
        kids.append(_Cell(
            new_id(), p, axes.copy(), c.angle + rng.normal(0, 0.3),
            c.intensity * float(np.exp(rng.normal(0.0, cfg.daughter_jitter))),
            float(np.clip(c.texture * np.exp(rng.normal(0.0, 2 * cfg.daughter_jitter)), *cfg.texture_range)),
            c.velocity * 0.5 + sgn * 0.5 * u, t))
    return kids


def _render(t, cells, cfg, rng, tracks, cell_of):
    H, W = cfg.shape
    labels = np.zeros((H, W), dtype=np.uint16)
    image = rng.normal(cfg.background, cfg.noise_sigma, size=(H, W))
    perm = rng.permutation(len(cells)) + 1
    for c, lab in zip(cells, perm):
        r = int(np.ceil(c.radius)) + 1
        cy, cx = int(round(c.pos[0])), int(round(c.pos[1]))
        y0, y1 = max(cy - r, 0), min(cy + r + 1, H)
        x0, x1 = max(cx - r, 0), min(cx + r + 1, W)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        dy, dx = yy - c.pos[0], xx - c.pos[1]
        ca, sa = np.cos(c.angle), np.sin(c.angle)
        u = (dy * ca + dx * sa) / c.axes[0]
        v = (-dy * sa + dx * ca) / c.axes[1]
        rr = u * u + v * v
        inside = rr <= 1.0
        if cfg.allow_overlap:
            inside &= labels[y0:y1, x0:x1] == 0
        if not inside.any():
            inside[min(cy, y1 - 1) - y0, min(cx, x1 - 1) - x0] = True
        tex = 1.0 + c.texture * rng.standard_normal(inside.sum())
        shade = 1.0 - 0.35 * rr[inside]
        labels[y0:y1, x0:x1][inside] = lab
        image[y0:y1, x0:x1][inside] = c.intensity * shade * tex
        key = (t, int(lab))
        cell_of[key] = c.n
        tracks[c.n].instances.append(key)
    image = np.clip(np.rint(image), 0, 65535).astype(np.uint16)
    return FrameRecord(t, image, labels)


def config_dict(cfg):
    d = asdict(cfg)
    d["shape"] = list(cfg.shape)
    d["radius_range"] = list(cfg.radius_range)
    d["intensity_range"] = list(cfg.intensity_range)
    d["texture_range"] = list(cfg.texture_range)
    return d


# ------------------------------------------------------------------ baseline

def nearest_centroid_baseline(instances):
    """Greedy closest-first matching of centroids between consecutive frames.

    Returns the set of ((t, label), (t + 1, label)) links.
    """
    by_t = {}
    for c in instances:
        by_t.setdefault(c.t, []).append(c)
    links = set()
    for t in sorted(by_t):
        nxt = by_t.get(t + 1)
        if not nxt:
            continue
        cur = by_t[t]
        a = np.array([c.centroid for c in cur])
        b = np.array([c.centroid for c in nxt])
        d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
        order = np.argsort(d, axis=None, kind="stable")
        used_a, used_b = set(), set()
        for flat in order:
            i, j = divmod(int(flat), len(nxt))
            if i in used_a or j in used_b:
                continue
            used_a.add(i)
            used_b.add(j)
            links.add((cur[i].key, nxt[j].key))
            if len(used_a) == len(cur) or len(used_b) == len(nxt):
                break
    return links


def separable_descriptors(n_classes=16, per_class=10, spread=0.15, informative=12, nuisance=1.0,
                          seed=0, dim=None):
    """Linearly separable toy DML data.

    Classes are tight Gaussian clouds in the first ``informative`` dimensions;
    the remaining dimensions carry class-independent noise of scale
    ``nuisance``, which an untrained embedding mixes in and training must
    learn to ignore. Each class is one "cell" observed in frames 1..per_class.
    """
    from .dml import DmlDataset
    from .features import DESCRIPTOR_DIM

    dim = dim or DESCRIPTOR_DIM
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(n_classes), per_class)
    desc = nuisance * rng.normal(size=(labels.size, dim))
    centres = rng.normal(size=(n_classes, informative))
    desc[:, :informative] = centres[labels] + spread * rng.normal(size=(labels.size, informative))
    frames = np.tile(np.arange(1, per_class + 1), n_classes)
    return DmlDataset(desc, labels, frames)
