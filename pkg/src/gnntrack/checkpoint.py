"""JSON checkpoint container of named float64 tensors.

Floats are written with ``repr`` precision, so save/load is bit-exact.
"""
import json

import numpy as np

FORMAT = "gnntrack-checkpoint"
VERSION = 1


def save(path, tensors, meta=None):
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "meta": meta or {},
        "tensors": {
            name: {"shape": list(np.shape(a)), "data": np.asarray(a, dtype=np.float64).ravel().tolist()}
            for name, a in sorted(tensors.items())
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path}: not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    tensors = {name: np.array(t["data"], dtype=np.float64).reshape(t["shape"])
               for name, t in doc["tensors"].items()}
    return tensors, doc.get("meta", {})
