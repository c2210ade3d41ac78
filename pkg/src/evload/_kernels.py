"""Hot numeric loops, compiled with numba when available.

Every kernel has a pure-numpy twin. The active backend is chosen at import
time: numba unless ``EVLOAD_DISABLE_NUMBA`` is set to a truthy value or numba
cannot be imported. Both twins are always importable so tests and the
benchmark can compare them directly.
"""

import os

import numpy as np

_DISABLED = os.environ.get("EVLOAD_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    from numba import njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

BACKEND = "numba" if (HAS_NUMBA and not _DISABLED) else "numpy"


# ---------------------------------------------------------------------------
# Interval rasterization
# ---------------------------------------------------------------------------

def rasterize_numpy(rows, starts, ends, powers, n_rows, n_slots, slot_h):
    """Spread constant-power intervals over a slot grid, conserving energy.

    Interval ``i`` covers ``[starts[i], ends[i])`` hours on row ``rows[i]`` at
    ``powers[i]`` kW. A slot receives ``power * overlap_h / slot_h``. Parts of
    an interval outside ``[0, n_slots * slot_h)`` are dropped.
    """
    out = np.zeros((n_rows, n_slots))
    rows = np.asarray(rows, dtype=np.int64)
    starts = np.asarray(starts, dtype=np.float64)
    ends = np.asarray(ends, dtype=np.float64)
    powers = np.asarray(powers, dtype=np.float64)
    horizon = n_slots * slot_h
    a = np.maximum(starts, 0.0)
    b = np.minimum(ends, horizon)
    keep = b > a
    if not keep.any():
        return out
    rows, a, b, p = rows[keep], a[keep], b[keep], powers[keep]
    first = np.floor(a / slot_h).astype(np.int64)
    last = np.minimum(np.ceil(b / slot_h).astype(np.int64), n_slots) - 1
    last = np.maximum(last, first)
    counts = last - first + 1
    owner = np.repeat(np.arange(a.size), counts)
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    slot = first[owner] + offsets
    lo = np.maximum(a[owner], slot * slot_h)
    hi = np.minimum(b[owner], (slot + 1) * slot_h)
    overlap = np.maximum(hi - lo, 0.0)
    # np.add.at accumulates in index order, matching the compiled loop
    np.add.at(out, (rows[owner], slot), p[owner] * overlap / slot_h)
    return out


def _rasterize_loop(rows, starts, ends, powers, n_rows, n_slots, slot_h):
    out = np.zeros((n_rows, n_slots))
    horizon = n_slots * slot_h
    for i in range(starts.shape[0]):
        a = max(starts[i], 0.0)
        b = min(ends[i], horizon)
        if b <= a:
            continue
        r = rows[i]
        p = powers[i]
        first = int(np.floor(a / slot_h))
        last = min(int(np.ceil(b / slot_h)), n_slots) - 1
        if last < first:
            last = first
        for s in range(first, last + 1):
            lo = max(a, s * slot_h)
            hi = min(b, (s + 1) * slot_h)
            overlap = max(hi - lo, 0.0)
            out[r, s] += p * overlap / slot_h
    return out


# ---------------------------------------------------------------------------
# Run detection for event segmentation
# ---------------------------------------------------------------------------

def segment_runs_numpy(residual, threshold, merge_gap, min_duration):
    """Return ``(starts, ends)`` of above-threshold runs (end exclusive).

    Runs shorter than ``min_duration`` slots are dropped first, so an isolated
    spike cannot latch onto a neighbouring event; the survivors are merged
    when at most ``merge_gap`` below-threshold slots separate them.
    """
    mask = np.asarray(residual) >= threshold
    padded = np.concatenate(([False], mask, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    starts = edges[0::2]
    ends = edges[1::2]
    keep = (ends - starts) >= min_duration
    starts, ends = starts[keep], ends[keep]
    if starts.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy()
    gaps = starts[1:] - ends[:-1]
    breaks = np.flatnonzero(gaps > merge_gap)
    m_starts = np.concatenate(([starts[0]], starts[breaks + 1]))
    m_ends = np.concatenate((ends[breaks], [ends[-1]]))
    return m_starts.astype(np.int64), m_ends.astype(np.int64)


def _segment_loop(residual, threshold, merge_gap, min_duration):
    n = residual.shape[0]
    starts = np.empty(n, dtype=np.int64)
    ends = np.empty(n, dtype=np.int64)
    k = 0
    i = 0
    while i < n:
        if residual[i] >= threshold:
            j = i
            while j < n and residual[j] >= threshold:
                j += 1
            if j - i >= min_duration:
                if k > 0 and i - ends[k - 1] <= merge_gap:
                    ends[k - 1] = j
                else:
                    starts[k] = i
                    ends[k] = j
                    k += 1
            i = j
        else:
            i += 1
    return starts[:k].copy(), ends[:k].copy()


# ---------------------------------------------------------------------------
# Gaussian product-kernel density
# ---------------------------------------------------------------------------

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def kde_pdf_numpy(points, samples, bandwidth, circular, period, chunk=2048):
    """Evaluate a diagonal Gaussian KDE at ``points`` (m, d)."""
    m, d = points.shape
    n = samples.shape[0]
    out = np.empty(m)
    norm = 1.0 / (n * np.prod(bandwidth))
    for c0 in range(0, m, chunk):
        p = points[c0:c0 + chunk]
        prod = np.ones((p.shape[0], n))
        for j in range(d):
            diff = (p[:, j][:, None] - samples[:, j][None, :]) / bandwidth[j]
            k = np.exp(-0.5 * diff * diff)
            if circular[j]:
                shift = period / bandwidth[j]
                k = k + np.exp(-0.5 * (diff - shift) ** 2) + np.exp(-0.5 * (diff + shift) ** 2)
            prod *= k * _INV_SQRT_2PI
        out[c0:c0 + chunk] = prod.sum(axis=1) * norm
    return out


def _kde_pdf_loop(points, samples, bandwidth, circular, period):
    m, d = points.shape
    n = samples.shape[0]
    out = np.empty(m)
    norm = 1.0
    for j in range(d):
        norm *= bandwidth[j]
    norm = 1.0 / (n * norm)
    for q in range(m):
        total = 0.0
        for i in range(n):
            prod = 1.0
            for j in range(d):
                u = (points[q, j] - samples[i, j]) / bandwidth[j]
                k = np.exp(-0.5 * u * u)
                if circular[j]:
                    shift = period / bandwidth[j]
                    k += np.exp(-0.5 * (u - shift) ** 2) + np.exp(-0.5 * (u + shift) ** 2)
                prod *= k * _INV_SQRT_2PI
            total += prod
        out[q] = total * norm
    return out


if HAS_NUMBA:
    rasterize_numba = njit(cache=True)(_rasterize_loop)
    segment_runs_numba = njit(cache=True)(_segment_loop)
    kde_pdf_numba = njit(cache=True)(_kde_pdf_loop)
else:  # pragma: no cover
    rasterize_numba = _rasterize_loop
    segment_runs_numba = _segment_loop
    kde_pdf_numba = _kde_pdf_loop


def rasterize(rows, starts, ends, powers, n_rows, n_slots, slot_h):
    if BACKEND == "numba":
        return rasterize_numba(
            np.ascontiguousarray(rows, dtype=np.int64),
            np.ascontiguousarray(starts, dtype=np.float64),
            np.ascontiguousarray(ends, dtype=np.float64),
            np.ascontiguousarray(powers, dtype=np.float64),
            int(n_rows), int(n_slots), float(slot_h),
        )
    return rasterize_numpy(rows, starts, ends, powers, n_rows, n_slots, slot_h)


def segment_runs(residual, threshold, merge_gap, min_duration):
    if BACKEND == "numba":
        return segment_runs_numba(
            np.ascontiguousarray(residual, dtype=np.float64),
            float(threshold), int(merge_gap), int(min_duration),
        )
    return segment_runs_numpy(residual, threshold, merge_gap, min_duration)


def kde_pdf(points, samples, bandwidth, circular, period):
    points = np.ascontiguousarray(points, dtype=np.float64)
    samples = np.ascontiguousarray(samples, dtype=np.float64)
    bandwidth = np.ascontiguousarray(bandwidth, dtype=np.float64)
    circular = np.ascontiguousarray(circular, dtype=np.bool_)
    if BACKEND == "numba":
        return kde_pdf_numba(points, samples, bandwidth, circular, float(period))
    return kde_pdf_numpy(points, samples, bandwidth, circular, float(period))
