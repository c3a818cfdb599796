#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-Python/numpy fallbacks.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--n 2000000] [--repeats 5]

The shadow scan is the simulator's inner loop (one AR step per packet); the
signature span search is the per-link clean-run sweep. Both backends produce
bit-identical outputs, which the benchmark asserts before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from v2vprop import _kernels


def time_fn(fn, *args, repeats: int = 5) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_shadow_scan(n: int, repeats: int) -> None:
    rng = np.random.default_rng(0)
    rho = np.exp(-np.abs(rng.normal(0.5, 0.3, n)) / 10.0)
    rho[0] = 0.0
    sigma = np.where(rng.random(n) < 0.5, 4.0, 5.0)
    z = rng.standard_normal(n)

    out_py = _kernels.shadow_scan_py(rho, sigma, z)
    rows = [("pure python", time_fn(_kernels.shadow_scan_py, rho, sigma, z, repeats=repeats))]
    if _kernels.shadow_scan_njit is not None:
        _kernels.shadow_scan_njit(rho[:10], sigma[:10], z[:10])  # trigger compile
        out_nb = _kernels.shadow_scan_njit(rho, sigma, z)
        assert np.array_equal(out_py, out_nb), "backends disagree"
        rows.append(("numba njit", time_fn(_kernels.shadow_scan_njit, rho, sigma, z, repeats=repeats)))
    _print_table(f"shadow_scan (n={n:,})", rows)


def bench_signature_spans(n: int, repeats: int) -> None:
    rng = np.random.default_rng(1)
    seq = np.cumsum(rng.integers(1, 3, size=n)).astype(np.int64)

    out_py = _kernels.signature_spans_py(seq, 500, 0.3)
    rows = [("pure python", time_fn(_kernels.signature_spans_py, seq, 500, 0.3, repeats=repeats))]
    if _kernels.signature_spans_njit is not None:
        _kernels.signature_spans_njit(seq[:100], 10, 0.3)
        out_nb = _kernels.signature_spans_njit(seq, 500, 0.3)
        assert np.array_equal(out_py, out_nb), "backends disagree"
        rows.append(("numba njit", time_fn(_kernels.signature_spans_njit, seq, 500, 0.3, repeats=repeats)))
    _print_table(f"signature_spans (n={n:,})", rows)


def _print_table(title: str, rows: list[tuple[str, float]]) -> None:
    print(f"\n{title}")
    base = rows[0][1]
    for name, seconds in rows:
        speedup = base / seconds if seconds > 0 else float("inf")
        print(f"  {name:<12} {seconds * 1e3:10.2f} ms   x{speedup:.1f}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=2_000_000)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    print(f"numba available: {_kernels.njit is not None}; "
          f"active backend: {'numba' if _kernels.NUMBA_ENABLED else 'pure python'}")
    bench_shadow_scan(args.n, args.repeats)
    bench_signature_spans(args.n, args.repeats)


if __name__ == "__main__":
    main()
