"""Hot numeric kernels, numba-jitted when available.

Two loops dominate runtime on large traces: the correlated-shadow scan used
by the simulator (a sequential AR recursion, one step per packet) and the
clean-run search used by signature extraction (a two-pointer sweep over
sequence numbers). Both carry a pure-Python/numpy fallback; set
``V2VPROP_NO_NUMBA=1`` to force the fallback path. The two paths are
bit-identical (same float64 operation order), so results never depend on
which backend ran. ``benchmarks/bench_kernels.py`` compares them.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a normal dependency
    njit = None

_DISABLED = os.environ.get("V2VPROP_NO_NUMBA", "").lower() in ("1", "true", "yes")
NUMBA_ENABLED = njit is not None and not _DISABLED


def _shadow_scan_impl(rho, sigma, z):
    # s[k] = rho[k]*s[k-1] + sqrt(1-rho[k]^2)*sigma[k]*z[k], s[-1] = 0.
    # Callers set rho[0] = 0 so the first sample is drawn at stationarity.
    n = rho.shape[0]
    out = np.empty(n, dtype=np.float64)
    s = 0.0
    for k in range(n):
        r = rho[k]
        s = r * s + math.sqrt(1.0 - r * r) * sigma[k] * z[k]
        out[k] = s
    return out


def _signature_spans_impl(seq, min_len, max_loss):
    # Greedy leftmost scan for disjoint blocks of received packets whose
    # missing-seq fraction stays within budget. seq must be strictly
    # increasing. Returns (n_blocks, 2) start/end indices into seq.
    n = seq.shape[0]
    starts = np.empty(n, dtype=np.int64)
    ends = np.empty(n, dtype=np.int64)
    count = 0
    i = 0
    j = 0
    while i < n:
        if j < i:
            j = i
        while j + 1 < n:
            slots = seq[j + 1] - seq[i] + 1
            missing = slots - (j + 1 - i + 1)
            if missing <= max_loss * slots:
                j += 1
            else:
                break
        slots = seq[j] - seq[i] + 1
        missing = slots - (j - i + 1)
        if slots >= min_len and missing <= max_loss * slots:
            starts[count] = i
            ends[count] = j
            count += 1
            i = j + 1
        else:
            i += 1
    return np.column_stack((starts[:count], ends[:count]))


shadow_scan_py = _shadow_scan_impl
signature_spans_py = _signature_spans_impl

if njit is not None:
    shadow_scan_njit = njit(cache=True)(_shadow_scan_impl)
    signature_spans_njit = njit(cache=True)(_signature_spans_impl)
else:  # pragma: no cover
    shadow_scan_njit = None
    signature_spans_njit = None

if NUMBA_ENABLED:
    _shadow_scan = shadow_scan_njit
    _signature_spans = signature_spans_njit
else:
    _shadow_scan = shadow_scan_py
    _signature_spans = signature_spans_py


def shadow_scan(rho: np.ndarray, sigma: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Evolve the exponentially correlated shadow-fading process.

    ``rho[k]`` is the step correlation exp(-moved/d_corr), ``sigma[k]`` the
    shadow std (dB) active at step k, ``z[k]`` a unit normal draw.
    """
    rho = np.ascontiguousarray(rho, dtype=np.float64)
    sigma = np.ascontiguousarray(sigma, dtype=np.float64)
    z = np.ascontiguousarray(z, dtype=np.float64)
    if not (rho.shape == sigma.shape == z.shape):
        raise ValueError("rho, sigma and z must have matching shapes")
    return _shadow_scan(rho, sigma, z)


def signature_spans(seq: np.ndarray, min_len: int, max_loss: float) -> np.ndarray:
    """Find disjoint clean runs in a strictly increasing seq_no array.

    A run spans seq[i]..seq[j] (both received); it qualifies when it covers
    at least ``min_len`` sequence slots and the fraction of missing slots is
    at most ``max_loss``. Runs are emitted greedily left to right.
    """
    seq = np.ascontiguousarray(seq, dtype=np.int64)
    return _signature_spans(seq, int(min_len), float(max_loss))
