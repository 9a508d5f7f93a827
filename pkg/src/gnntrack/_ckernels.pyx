# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot loops: row scatter-add and single-pass label statistics."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def scatter_add_rows(double[:, ::1] out, const long long[::1] index,
                     const double[:, ::1] values):
    cdef Py_ssize_t e, c, n = index.shape[0], m = values.shape[1]
    cdef long long r
    for e in range(n):
        r = index[e]
        for c in range(m):
            out[r, c] += values[e, c]


def _label_stats_flat(const long long[::1] flat, const double[::1] vals,
                      const long long[::1] shape, Py_ssize_t n_labels):
    cdef Py_ssize_t ndim = shape.shape[0], k = n_labels + 1
    cdef Py_ssize_t p, a, b, n = flat.shape[0]
    cdef long long lab, rem
    cdef long long coord[3]
    cdef double v

    count_a = np.zeros(k)
    sum_coord_a = np.zeros((k, ndim))
    sum_outer_a = np.zeros((k, ndim, ndim))
    bbox_min_a = np.full((k, ndim), np.iinfo(np.int64).max, dtype=np.int64)
    bbox_max_a = np.full((k, ndim), -1, dtype=np.int64)
    int_min_a = np.full(k, np.inf)
    int_max_a = np.full(k, -np.inf)
    int_sum_a = np.zeros(k)
    int_sumsq_a = np.zeros(k)

    cdef double[::1] count = count_a
    cdef double[:, ::1] sum_coord = sum_coord_a
    cdef double[:, :, ::1] sum_outer = sum_outer_a
    cdef long long[:, ::1] bbox_min = bbox_min_a
    cdef long long[:, ::1] bbox_max = bbox_max_a
    cdef double[::1] int_min = int_min_a
    cdef double[::1] int_max = int_max_a
    cdef double[::1] int_sum = int_sum_a
    cdef double[::1] int_sumsq = int_sumsq_a

    for p in range(n):
        lab = flat[p]
        rem = p
        for a in range(ndim - 1, -1, -1):
            coord[a] = rem % shape[a]
            rem = rem // shape[a]
        v = vals[p]
        count[lab] += 1.0
        for a in range(ndim):
            sum_coord[lab, a] += coord[a]
            if coord[a] < bbox_min[lab, a]:
                bbox_min[lab, a] = coord[a]
            if coord[a] > bbox_max[lab, a]:
                bbox_max[lab, a] = coord[a]
            for b in range(ndim):
                sum_outer[lab, a, b] += <double>coord[a] * coord[b]
        if v < int_min[lab]:
            int_min[lab] = v
        if v > int_max[lab]:
            int_max[lab] = v
        int_sum[lab] += v
        int_sumsq[lab] += v * v

    return {
        "count": count_a, "sum_coord": sum_coord_a, "sum_outer": sum_outer_a,
        "bbox_min": bbox_min_a, "bbox_max": bbox_max_a,
        "int_min": int_min_a, "int_max": int_max_a,
        "int_sum": int_sum_a, "int_sumsq": int_sumsq_a,
    }


def label_stats(labels, image, n_labels):
    if labels.ndim > 3:
        raise ValueError("label grids must be 2D or 3D")
    flat = np.ascontiguousarray(labels.ravel(), dtype=np.int64)
    vals = np.ascontiguousarray(image.ravel(), dtype=np.float64)
    shape = np.asarray(labels.shape, dtype=np.int64)
    return _label_stats_flat(flat, vals, shape, n_labels)
