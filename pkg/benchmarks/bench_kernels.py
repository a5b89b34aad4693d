"""Benchmark: compiled kernels vs the pure-numpy fallback.

The two hot spots in a training step are the embedding-gradient
scatter-add and the AdamW update.  Usage:

    python benchmarks/bench_kernels.py [--repeats 200]

A full-step comparison (same model/config as the synthetic experiment)
can be added with --train-steps N; it re-imports the package with
CFDETOX_PURE_PYTHON toggled in a subprocess, so each backend is measured
in a clean interpreter.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time
import timeit

import numpy as np


def bench_scatter(impl, repeats: int, n_ids: int = 1024, vocab: int = 3000, dim: int = 128) -> float:
    rng = np.random.default_rng(0)
    ids = rng.integers(0, vocab, size=n_ids).astype(np.int64)
    rows = rng.normal(size=(n_ids, dim))
    out = np.zeros((vocab, dim))
    return min(timeit.repeat(lambda: impl.scatter_add_rows(out, ids, rows),
                             number=1, repeat=repeats))


def bench_adamw(impl, repeats: int, n: int = 500_000) -> float:
    rng = np.random.default_rng(1)
    p = rng.normal(size=n)
    g = rng.normal(size=n)
    m = np.zeros(n)
    v = np.zeros(n)
    return min(timeit.repeat(
        lambda: impl.adamw_update(p, g, m, v, 1e-5, 0.9, 0.999, 1e-8, 0.01, 0.1, 0.001),
        number=1, repeat=repeats))


def bench_train_step(steps: int) -> float:
    """Seconds per training step at the synthetic-experiment configuration."""
    from cfdetox import data as D
    from cfdetox import training as T

    train, _, _ = D.generate_synthetic_corpus(7, max(64, steps * 8), 8, 0.95)
    cfg = T.TrainConfig(epochs=1, eval_every_steps=10 ** 9)
    subset = train[: steps * cfg.batch_size]
    t0 = time.perf_counter()
    T.train(cfg, subset, subset[:32], D.synthetic_lexicon())
    return (time.perf_counter() - t0) / steps


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200, help="timing repeats per kernel")
    parser.add_argument("--train-steps", type=int, default=0,
                        help="also time full training steps per backend (0 = skip)")
    parser.add_argument("--_train-probe", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args._train_probe:
        import cfdetox.kernels as K

        per_step = bench_train_step(args.train_steps)
        print(f"{K.BACKEND},{per_step:.6f}")
        return 0

    import cfdetox.kernels as K  # noqa: F401 (reports active backend)
    from cfdetox.kernels import pure

    try:
        from cfdetox.kernels import _fast
    except ImportError:
        _fast = None

    print(f"active backend: {K.BACKEND}")
    rows = []
    pure_scatter = bench_scatter(pure, args.repeats)
    pure_adamw = bench_adamw(pure, max(10, args.repeats // 10))
    if _fast is not None:
        fast_scatter = bench_scatter(_fast, args.repeats)
        fast_adamw = bench_adamw(_fast, max(10, args.repeats // 10))
        rows.append(("scatter_add_rows (1024x128 into 3000x128)", pure_scatter, fast_scatter))
        rows.append(("adamw_update (500k params)", pure_adamw, fast_adamw))
    else:
        rows.append(("scatter_add_rows (1024x128 into 3000x128)", pure_scatter, None))
        rows.append(("adamw_update (500k params)", pure_adamw, None))

    print(f"{'kernel':<45} {'pure':>12} {'compiled':>12} {'speedup':>8}")
    for name, pure_t, fast_t in rows:
        if fast_t is None:
            print(f"{name:<45} {pure_t * 1e6:>10.1f}us {'n/a':>12} {'n/a':>8}")
        else:
            print(f"{name:<45} {pure_t * 1e6:>10.1f}us {fast_t * 1e6:>10.1f}us {pure_t / fast_t:>7.1f}x")

    if args.train_steps > 0:
        print(f"\nfull training step ({args.train_steps} steps, stock config):")
        for env_value, label in (("1", "pure"), ("0", "compiled")):
            if label == "compiled" and _fast is None:
                print("  compiled: extension not built")
                continue
            env = dict(os.environ, CFDETOX_PURE_PYTHON=env_value)
            out = subprocess.run(
                [sys.executable, __file__, "--_train-probe", "--train-steps", str(args.train_steps)],
                env=env, capture_output=True, text=True, check=True,
            ).stdout.strip()
            backend, per_step = out.split(",")
            print(f"  {label} ({backend}): {float(per_step) * 1e3:.2f} ms/step")
    return 0


if __name__ == "__main__":
    sys.exit(main())
