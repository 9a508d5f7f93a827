"""Time the compiled kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-N wall time for each kernel on desk-sized inputs and the
speedup of the compiled version. Both are checked to agree before timing.
"""
import argparse
import sys
import timeit

import numpy as np

from gnntrack import _pykernels, synth

try:
    from gnntrack import _ckernels
except ImportError:
    _ckernels = None


def _cases(rng):
    frame = synth.generate_sequence(synth.preset("desk", seed=0, T=1)).frames[0]
    labels = frame.labels.astype(np.int64)
    image = np.asarray(frame.image, dtype=np.float64)
    n_labels = int(labels.max())
    big = np.kron(labels, np.ones((4, 4), dtype=np.int64))   # 1024 x 1024
    big_img = np.kron(image, np.ones((4, 4)))
    idx = rng.integers(0, 2000, 40000).astype(np.int64)
    vals = rng.normal(size=(40000, 64))

    def scatter(mod):
        out = np.zeros((2000, 64))
        mod.scatter_add_rows(out, idx, vals)
        return out

    return {
        "label_stats 256x256": lambda mod: mod.label_stats(labels, image, n_labels),
        "label_stats 1024x1024": lambda mod: mod.label_stats(big, big_img, n_labels),
        "scatter_add 40000x64 -> 2000": scatter,
    }


def _agree(a, b):
    if isinstance(a, dict):
        return all(np.allclose(np.asarray(b[k]), a[k], rtol=1e-12) for k in a)
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels are not built; reinstall with Cython available")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in _cases(rng).items():
        if not _agree(fn(_pykernels), fn(_ckernels)):
            print(f"{name}: backends disagree")
            return 1
        t_py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat))
        t_c = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat))
        print(f"{name:32s} {1e3 * t_py:10.2f} {1e3 * t_c:10.2f} {t_py / t_c:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
