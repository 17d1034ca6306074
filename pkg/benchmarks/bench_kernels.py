"""Time the numba kernels against their pure-numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 20]

Both paths are called explicitly through the ``use_numba`` override, so the
``LATENTQUERY_NUMBA`` environment flag does not matter here.  Outputs are
compared before timing.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from latentquery import kernels


def _time(fn, repeat: int) -> float:
    fn()  # warm-up (compilation on the numba path)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng: np.random.Generator):
    a = rng.integers(0, 50, 400)
    b = rng.integers(0, 50, 60)
    words = rng.integers(0, 300, 250)
    x = rng.standard_normal((8 * 40, 64))
    x_hat, inv = kernels.layernorm_forward(x, 1e-5, use_numba=False)
    g = rng.standard_normal(x.shape)
    return {
        "lcs_earliest (400x60)": lambda nb: kernels.lcs_earliest(a, b, use_numba=nb),
        "skip_bigram_codes (250 words)": lambda nb: kernels.skip_bigram_codes(words, 4, 1 << 20, use_numba=nb),
        "layernorm_forward (320x64)": lambda nb: kernels.layernorm_forward(x, 1e-5, use_numba=nb),
        "layernorm_backward (320x64)": lambda nb: kernels.layernorm_backward(g, x_hat, inv, use_numba=nb),
    }


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(np.asarray(a), np.asarray(b), rtol=1e-10, atol=1e-12)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':34s} {'numpy (ms)':>11s} {'numba (ms)':>11s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        if not _same(fn(False), fn(True)):
            raise SystemExit(f"{name}: numba and numpy paths disagree")
        t_py = _time(lambda: fn(False), args.repeat)
        t_nb = _time(lambda: fn(True), args.repeat)
        print(f"{name:34s} {t_py * 1e3:11.3f} {t_nb * 1e3:11.3f} {t_py / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
