"""Kernel dispatch: the compiled extension when built, numpy otherwise.

Set ``GNNTRACK_PURE_PYTHON=1`` to force the numpy implementations.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("GNNTRACK_PURE_PYTHON", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        pass


def scatter_add_rows(out, index, values):
    """In place ``out[index[e]] += values[e]`` with repeated indices accumulating."""
    if len(index) == 0:
        return
    if index.min() < 0 or index.max() >= out.shape[0]:
        raise IndexError("scatter index out of range")
    if _impl is _pykernels or out.ndim != 2 or not out.flags.c_contiguous:
        _pykernels.scatter_add_rows(out, index, values)
        return
    _impl.scatter_add_rows(out, np.ascontiguousarray(index, dtype=np.int64),
                           np.ascontiguousarray(values, dtype=np.float64))


def label_stats(labels, image, n_labels):
    return _impl.label_stats(labels, image, n_labels)


__all__ = ["BACKEND", "scatter_add_rows", "label_stats"]
