"""Per-instance measurements from label maps: spatio-temporal features and descriptors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

N_HIST_BINS = 16
DESCRIPTOR_DIM = 24


@dataclass
class FrameRecord:
    t: int
    image: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.image.shape != self.labels.shape:
            raise ValueError(f"frame {self.t}: image shape {self.image.shape} "
                             f"!= label shape {self.labels.shape}")


@dataclass
class CellInstance:
    t: int
    label: int
    centroid: tuple
    int_min: float
    int_max: float
    int_mean: float
    int_std: float = 0.0
    area: float | None = None
    bbox_min: tuple | None = None
    bbox_max: tuple | None = None
    major: float | None = None
    minor: float | None = None
    eccentricity: float | None = None
    descriptor: np.ndarray = field(default=None, repr=False)
    gt_cell: int | None = None
    index: int = -1

    @property
    def key(self):
        return (self.t, self.label)

    @property
    def has_shape(self):
        return self.area is not None

    @property
    def ndim(self):
        return len(self.centroid)


def extract_st_features(frame: FrameRecord, masks=True):
    """One :class:`CellInstance` per nonzero label of ``frame``, ordered by label.

    With ``masks=False`` the label map is treated as markers and the shape
    fields (area, axes, bbox) stay ``None``.
    """
    labels = np.asarray(frame.labels)
    uniq = np.unique(labels)
    uniq = uniq[uniq != 0]
    if uniq.size == 0:
        return []
    if uniq[0] == 1 and uniq[-1] == uniq.size:
        dense = labels.astype(np.int64)
    else:
        lut = np.zeros(int(uniq[-1]) + 1, dtype=np.int64)
        lut[uniq] = np.arange(1, uniq.size + 1)
        dense = lut[labels]
    image = np.asarray(frame.image, dtype=np.float64)
    st = kernels.label_stats(dense, image, uniq.size)
    ndim = labels.ndim
    hists = _label_histograms(dense, image, uniq.size)

    out = []
    for k, lab in enumerate(uniq, start=1):
        n = st["count"][k]
        mean_c = st["sum_coord"][k] / n
        mean_i = st["int_sum"][k] / n
        var_i = max(st["int_sumsq"][k] / n - mean_i * mean_i, 0.0)
        inst = CellInstance(
            t=frame.t, label=int(lab), centroid=tuple(float(c) for c in mean_c),
            int_min=float(st["int_min"][k]), int_max=float(st["int_max"][k]),
            int_mean=float(mean_i), int_std=float(np.sqrt(var_i)),
        )
        if masks:
            inst.area = float(n)
            inst.bbox_min = tuple(int(v) for v in st["bbox_min"][k])
            inst.bbox_max = tuple(int(v) for v in st["bbox_max"][k])
            if ndim == 2:
                cov = st["sum_outer"][k] / n - np.outer(mean_c, mean_c)
                evals = np.sort(np.clip(np.linalg.eigvalsh(cov), 0.0, None))[::-1]
                inst.major = float(4.0 * np.sqrt(evals[0]))
                inst.minor = float(4.0 * np.sqrt(evals[1]))
                inst.eccentricity = float(np.sqrt(1.0 - evals[1] / evals[0])) if evals[0] > 0 else 0.0
        inst.descriptor = _descriptor(inst, hists[k])
        out.append(inst)
    return out


def _label_histograms(dense, image, n_labels):
    lo, hi = float(image.min()), float(image.max())
    span = hi - lo if hi > lo else 1.0
    bins = np.clip(((image - lo) / span * N_HIST_BINS).astype(np.int64), 0, N_HIST_BINS - 1)
    flat = dense.ravel() * N_HIST_BINS + bins.ravel()
    h = np.bincount(flat, minlength=(n_labels + 1) * N_HIST_BINS).astype(np.float64)
    h = h.reshape(n_labels + 1, N_HIST_BINS)
    tot = h.sum(axis=1, keepdims=True)
    return h / np.where(tot > 0, tot, 1.0)


def _descriptor(inst: CellInstance, hist):
    d = np.zeros(DESCRIPTOR_DIM)
    d[:N_HIST_BINS] = hist
    if inst.has_shape:
        ext = np.array(inst.bbox_max) - np.array(inst.bbox_min) + 1
        d[16] = inst.area
        if inst.ndim == 2:
            d[17:19] = ext
            d[19] = inst.major
            d[20] = inst.minor
            d[21] = inst.eccentricity
        else:
            d[17:20] = ext[:3]
    d[22] = inst.int_mean
    d[23] = inst.int_std
    return d


def st_feature_names(ndim=2, masks=True):
    names = [f"centroid_{a}" for a in range(ndim)] + ["frame", "int_min", "int_max", "int_mean"]
    if masks:
        names.append("area")
        if ndim == 2:
            names += ["major_axis", "minor_axis"]
        names += [f"bbox_min_{a}" for a in range(ndim)] + [f"bbox_max_{a}" for a in range(ndim)]
    return names


@dataclass
class StFeatureTable:
    values: np.ndarray
    names: list


def st_table(instances):
    """Stack the spatio-temporal feature vectors of ``instances`` (rows in input order)."""
    if not instances:
        return StFeatureTable(np.zeros((0, 0)), [])
    ndim = instances[0].ndim
    masks = all(c.has_shape for c in instances)
    names = st_feature_names(ndim, masks)
    rows = []
    for c in instances:
        row = list(c.centroid) + [c.t, c.int_min, c.int_max, c.int_mean]
        if masks:
            row.append(c.area)
            if ndim == 2:
                row += [c.major, c.minor]
            row += list(c.bbox_min) + list(c.bbox_max)
        rows.append(row)
    return StFeatureTable(np.array(rows, dtype=np.float64), names)


def minmax_scale(table: StFeatureTable):
    """Map each column to [0, 1]; constant columns become 0."""
    v = table.values
    if v.shape[0] == 0:
        raise ValueError("cannot scale an empty feature table")
    lo = v.min(axis=0)
    span = v.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (v - lo) / safe, 0.0)
    return StFeatureTable(scaled, list(table.names))


def descriptors(instances):
    return np.stack([c.descriptor for c in instances]) if instances else np.zeros((0, DESCRIPTOR_DIM))
