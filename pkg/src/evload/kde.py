"""Gaussian kernel density estimates over charging-event statistics.

One- or two-dimensional, with a diagonal bandwidth. Clock-time dimensions are
circular with a 24 h period: samples wrap into [0, 24) and the density adds
the kernel images one period either side.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .data import MeterDataError, atomic_write

PERIOD_H = 24.0
MODEL_MAGIC = "evload-kde"
MODEL_VERSION = 1


class KdeError(ValueError):
    pass


@dataclass(frozen=True)
class KdeModel:
    samples: np.ndarray
    bandwidth: np.ndarray
    circular: tuple[bool, ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] not in (1, 2):
            raise KdeError("samples must be 1-D or 2-D")
        if x.shape[0] < 2:
            raise KdeError("need at least 2 samples")
        circ = tuple(bool(c) for c in self.circular)
        if len(circ) != x.shape[1]:
            raise KdeError("one circular flag per dimension")
        for j, c in enumerate(circ):
            if c:
                x[:, j] = np.mod(x[:, j], PERIOD_H)
        h = np.array(self.bandwidth, dtype=np.float64).reshape(-1)
        if h.shape != (x.shape[1],) or not np.all(h > 0):
            raise KdeError("one positive bandwidth per dimension")
        x.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "bandwidth", h)
        object.__setattr__(self, "circular", circ)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def dims(self) -> int:
        return self.samples.shape[1]

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    def pdf(self, x):
        return kde_pdf(self, x)

    def sample(self, rng: np.random.Generator, size=None):
        return kde_sample(self, rng, size)


def _circular_unwrap(x: np.ndarray) -> np.ndarray:
    """Re-center circular data so its circular mean sits mid-period."""
    ang = 2 * np.pi * x / PERIOD_H
    mean_h = np.arctan2(np.sin(ang).mean(), np.cos(ang).mean()) * PERIOD_H / (2 * np.pi)
    return np.mod(x - mean_h + PERIOD_H / 2, PERIOD_H)


def silverman_bandwidth(x: np.ndarray) -> float:
    """0.9 * min(std, IQR/1.34) * n^(-1/5); falls back to std when IQR is zero."""
    x = np.asarray(x, dtype=np.float64)
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25) / 1.34
    spread = min(sd, iqr) if iqr > 0 else sd
    if not spread > 0:
        raise KdeError("dimension has zero spread")
    return 0.9 * spread * x.size ** -0.2


def fit_kde(samples, circular: Sequence[bool] | None = None, bandwidth=None,
            labels: Sequence[str] = ()) -> KdeModel:
    """Fit a KDE with per-dimension Silverman bandwidths unless given."""
    x = np.array(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] not in (1, 2):
        raise KdeError("samples must be 1-D or 2-D")
    if x.shape[0] < 2:
        raise KdeError("need at least 2 samples")
    if circular is None:
        circular = (False,) * x.shape[1]
    if bandwidth is None:
        h = []
        for j in range(x.shape[1]):
            col = _circular_unwrap(np.mod(x[:, j], PERIOD_H)) if circular[j] else x[:, j]
            h.append(silverman_bandwidth(col))
        bandwidth = h
    return KdeModel(x, np.atleast_1d(bandwidth), tuple(circular), tuple(labels))


def kde_pdf(model: KdeModel, x):
    """Density at point(s) ``x``: scalar/1-D array for 1-D models, (m, 2) for 2-D."""
    pts = np.asarray(x, dtype=np.float64)
    scalar = pts.ndim == 0 or (model.dims == 2 and pts.ndim == 1)
    if model.dims == 1:
        pts = pts.reshape(-1, 1)
    else:
        pts = pts.reshape(-1, 2)
    pts = pts.copy()
    for j, c in enumerate(model.circular):
        if c:
            pts[:, j] = np.mod(pts[:, j], PERIOD_H)
    dens = _kernels.kde_pdf(pts, model.samples, model.bandwidth, np.array(model.circular), PERIOD_H)
    return float(dens[0]) if scalar else dens


def kde_sample(model: KdeModel, rng: np.random.Generator, size=None):
    """Smoothed bootstrap: a uniformly chosen observation plus kernel noise."""
    n_draw = 1 if size is None else int(size)
    idx = rng.integers(0, model.n, n_draw)
    noise = rng.standard_normal((n_draw, model.dims)) * model.bandwidth
    out = model.samples[idx] + noise
    for j, c in enumerate(model.circular):
        if c:
            out[:, j] = np.mod(out[:, j], PERIOD_H)
            # mod of a value a hair below zero can round up to the period
            out[out[:, j] >= PERIOD_H, j] = 0.0
    if model.dims == 1:
        out = out[:, 0]
    if size is None:
        return float(out[0]) if model.dims == 1 else out[0]
    return out


# ---------------------------------------------------------------------------
# Model file
# ---------------------------------------------------------------------------

def write_kde_model(path, model: KdeModel) -> None:
    """CSV model file: versioned header lines, then one sample per row."""
    labels = model.labels or tuple(f"x{j}" for j in range(model.dims))
    with atomic_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([MODEL_MAGIC, MODEL_VERSION])
        w.writerow(["dims", model.dims])
        w.writerow(["circular", *(int(c) for c in model.circular)])
        w.writerow(["bandwidth", *(repr(float(h)) for h in model.bandwidth)])
        w.writerow(["labels", *labels])
        w.writerow(["samples", model.n])
        for row in model.samples:
            w.writerow([repr(float(v)) for v in row])


def read_kde_model(path) -> KdeModel:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        if rows[0][0] != MODEL_MAGIC:
            raise MeterDataError(f"{path}: not a KDE model file")
        if int(rows[0][1]) != MODEL_VERSION:
            raise MeterDataError(f"{path}: unsupported model version {rows[0][1]}")
        meta = {r[0]: r[1:] for r in rows[1:6]}
        dims = int(meta["dims"][0])
        circular = tuple(bool(int(c)) for c in meta["circular"])
        bandwidth = [float(h) for h in meta["bandwidth"]]
        labels = tuple(meta["labels"])
        n = int(meta["samples"][0])
        samples = np.array([[float(v) for v in r] for r in rows[6:]], dtype=np.float64)
    except (IndexError, KeyError, ValueError) as exc:
        raise MeterDataError(f"{path}: malformed KDE model ({exc})") from None
    if samples.shape != (n, dims):
        raise MeterDataError(f"{path}: expected {n}x{dims} samples, got {samples.shape}")
    return KdeModel(samples, bandwidth, circular, labels)
