"""Micro-benchmark comparing the numba and numpy kernel backends."""

import importlib
import time

import numpy as np

from . import numpy_impl

# Always benchmark the numba backend when installed, even if the env flag
# routed the library itself to the numpy path.
try:
    numba_impl = importlib.import_module(".numba_impl", __package__)
except ImportError:
    numba_impl = None


def _time(fn, args, repeats):
    fn(*args)  # warm-up (triggers JIT compilation for the numba backend)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def run_kernel_benchmark(n_r=64, n_gamma=64, n_s=3, n_candidates=10000, l=6,
                         repeats=5, seed=0):
    """Time each kernel on both backends; returns a list of result rows."""
    rng = np.random.default_rng(seed)
    image = rng.random((112, 112))
    fi = rng.uniform(-1, 112, size=n_r * n_gamma)
    fj = rng.uniform(-1, 112, size=n_r * n_gamma)
    dev = rng.normal(size=(n_s, n_r, n_gamma))
    gram = numpy_impl.line_gram(dev)
    cands = np.stack([
        np.sort(rng.choice(n_gamma, size=l, replace=False)) for _ in range(n_candidates)
    ]).astype(np.int64)
    scores = rng.random(n_gamma)
    canvas = np.zeros((112, 112))

    cases = [
        ("bilinear_gather", "bilinear_gather", (image, fi, fj)),
        ("line_gram", "line_gram", (dev,)),
        ("candidate_gram_logdet", "candidate_gram_logdet", (gram, cands, 0.0004, n_r)),
        ("select_max_sum_with_exclusion", "select_max_sum_with_exclusion", (scores, l, 1)),
        ("ellipse_field", "ellipse_field",
         (canvas, 40.0, 56.0, 18.0, 12.0, 0.9, 0.43, 0.25, 0.5, 0.2)),
    ]
    rows = []
    for name, attr, args in cases:
        t_np = _time(getattr(numpy_impl, attr), args, repeats)
        row = {"kernel": name, "numpy_s": t_np}
        if numba_impl is not None:
            t_nb = _time(getattr(numba_impl, attr), args, repeats)
            row["numba_s"] = t_nb
            row["speedup"] = t_np / t_nb if t_nb > 0 else float("inf")
        rows.append(row)
    return rows


def format_kernel_benchmark(rows):
    lines = [f"{'kernel':32s} {'numpy':>12s} {'numba':>12s} {'speedup':>9s}"]
    for r in rows:
        nb = f"{r['numba_s']*1e3:10.3f}ms" if "numba_s" in r else "         --"
        sp = f"{r['speedup']:8.1f}x" if "speedup" in r else "       --"
        lines.append(f"{r['kernel']:32s} {r['numpy_s']*1e3:10.3f}ms {nb} {sp}")
    return "\n".join(lines)
