"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``."""
import numpy as np


def scatter_add_rows(out, index, values):
    np.add.at(out, index, values)


def label_stats(labels, image, n_labels):
    """Per-label pixel statistics in one pass over a 2D/3D label grid.

    Returns a dict of arrays indexed by label (row 0 is background).
    """
    ndim = labels.ndim
    flat = labels.ravel().astype(np.int64)
    vals = image.ravel().astype(np.float64)
    k = n_labels + 1
    coords = np.indices(labels.shape).reshape(ndim, -1).astype(np.float64)

    count = np.bincount(flat, minlength=k).astype(np.float64)
    sum_coord = np.stack([np.bincount(flat, coords[a], minlength=k) for a in range(ndim)], 1)
    sum_outer = np.empty((k, ndim, ndim))
    for a in range(ndim):
        for b in range(a, ndim):
            s = np.bincount(flat, coords[a] * coords[b], minlength=k)
            sum_outer[:, a, b] = s
            sum_outer[:, b, a] = s
    bbox_min = np.full((k, ndim), np.iinfo(np.int64).max, dtype=np.int64)
    bbox_max = np.full((k, ndim), -1, dtype=np.int64)
    for a in range(ndim):
        c = coords[a].astype(np.int64)
        np.minimum.at(bbox_min[:, a], flat, c)
        np.maximum.at(bbox_max[:, a], flat, c)
    int_min = np.full(k, np.inf)
    int_max = np.full(k, -np.inf)
    np.minimum.at(int_min, flat, vals)
    np.maximum.at(int_max, flat, vals)
    int_sum = np.bincount(flat, vals, minlength=k)
    int_sumsq = np.bincount(flat, vals * vals, minlength=k)
    return {
        "count": count, "sum_coord": sum_coord, "sum_outer": sum_outer,
        "bbox_min": bbox_min, "bbox_max": bbox_max,
        "int_min": int_min, "int_max": int_max,
        "int_sum": int_sum, "int_sumsq": int_sumsq,
    }
