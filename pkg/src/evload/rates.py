"""Average meter power by weighted least squares, and the charger rating model.

Each line fuse gives one measurement ``peak = a*X + b*Y`` where ``a`` and ``b``
count non-EV and EV meters downstream. With more fuses than unknowns the pair
``(X, Y)`` is recovered from the 2x2 weighted normal equations. ``Y - X`` is the
average EV charging power, which then anchors a truncated exponential
distribution for individual charger ratings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import LineFuseRecord

COND_LIMIT = 1e12
BISECT_MAX_ITER = 200


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class WlsProblem:
    records: tuple[LineFuseRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if len(self.records) < 2:
            raise EstimationError("need at least 2 fuse records")

    @property
    def H(self) -> np.ndarray:
        return np.array([[r.n_nonev, r.n_ev] for r in self.records], dtype=np.float64)

    @property
    def peaks(self) -> np.ndarray:
        return np.array([r.peak_kw for r in self.records], dtype=np.float64)

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([r.sigma for r in self.records], dtype=np.float64)


@dataclass(frozen=True)
class RateEstimate:
    x_nonev_kw: float
    y_ev_kw: float
    objective: float

    @property
    def ev_charging_kw(self) -> float:
        return self.y_ev_kw - self.x_nonev_kw


def solve_wls(problem: WlsProblem | Sequence[LineFuseRecord]) -> RateEstimate:
    """Minimize sum of ((P - aX - bY) / sigma)^2 over (X, Y)."""
    if not isinstance(problem, WlsProblem):
        problem = WlsProblem(tuple(problem))
    H = problem.H
    p = problem.peaks
    w = 1.0 / problem.sigmas ** 2
    a, b = H[:, 0], H[:, 1]

    # weighted normal matrix [[saa, sab], [sab, sbb]]
    saa = float(np.sum(w * a * a))
    sab = float(np.sum(w * a * b))
    sbb = float(np.sum(w * b * b))
    ra = float(np.sum(w * a * p))
    rb = float(np.sum(w * b * p))

    det = saa * sbb - sab * sab
    half_tr = 0.5 * (saa + sbb)
    disc = math.sqrt(max(half_tr * half_tr - det, 0.0))
    lam_max = half_tr + disc
    lam_min = det / lam_max if lam_max > 0 else 0.0
    if lam_min <= 0 or lam_max / lam_min > COND_LIMIT:
        raise EstimationError("normal matrix is singular or ill-conditioned (a and b proportional?)")

    x = (sbb * ra - sab * rb) / det
    y = (saa * rb - sab * ra) / det
    resid = p - (a * x + b * y)
    return RateEstimate(x, y, float(np.sum(w * resid * resid)))


# ---------------------------------------------------------------------------
# Truncated exponential charger rating
# ---------------------------------------------------------------------------

def _mean_fraction(u: float) -> float:
    """Mean position in [0, 1] of a unit-width truncated exponential with rate*width = u."""
    if abs(u) < 1e-4:
        return 0.5 - u / 12.0 + u ** 3 / 720.0
    return 1.0 / u - 1.0 / math.expm1(u)


@dataclass(frozen=True)
class TruncExpModel:
    """Exponential density restricted to ``[lower_kw, upper_kw]``.

    ``rate`` is signed: positive piles mass at the lower bound, negative at the
    upper bound, zero is uniform.
    """

    lower_kw: float
    upper_kw: float
    mean_kw: float
    rate: float

    def __post_init__(self):
        if not self.lower_kw < self.upper_kw:
            raise ValueError("lower_kw must be < upper_kw")
        if not self.lower_kw < self.mean_kw < self.upper_kw:
            raise ValueError("mean_kw must lie strictly inside (lower_kw, upper_kw)")

    @property
    def width(self) -> float:
        return self.upper_kw - self.lower_kw

    def analytic_mean(self) -> float:
        return truncexp_mean(self.lower_kw, self.upper_kw, self.rate)

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        inside = (x >= self.lower_kw) & (x <= self.upper_kw)
        if self.rate == 0.0:
            dens = np.full_like(x, 1.0 / self.width)
        else:
            lam = self.rate
            # written relative to the density peak so negative rates do not overflow
            if lam > 0:
                dens = lam * np.exp(-lam * (x - self.lower_kw)) / -math.expm1(-lam * self.width)
            else:
                dens = -lam * np.exp(-lam * (x - self.upper_kw)) / -math.expm1(lam * self.width)
        return np.where(inside, dens, 0.0)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=np.float64), self.lower_kw, self.upper_kw)
        if self.rate == 0.0:
            return (x - self.lower_kw) / self.width
        lam = self.rate
        return np.expm1(-lam * (x - self.lower_kw)) / math.expm1(-lam * self.width)

    def ppf(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.rate == 0.0:
            x = self.lower_kw + u * self.width
        else:
            lam = self.rate
            x = self.lower_kw - np.log1p(u * math.expm1(-lam * self.width)) / lam
        return np.clip(x, self.lower_kw, self.upper_kw)


def truncexp_mean(lower: float, upper: float, rate: float) -> float:
    width = upper - lower
    return lower + width * _mean_fraction(rate * width)


def fit_truncated_exponential(lower_kw: float, upper_kw: float, mean_kw: float) -> TruncExpModel:
    """Solve the signed rate whose truncated mean equals ``mean_kw``, by bisection."""
    if not lower_kw < upper_kw:
        raise ValueError("lower_kw must be < upper_kw")
    if not lower_kw < mean_kw < upper_kw:
        raise ValueError("mean_kw must lie strictly inside (lower_kw, upper_kw)")
    width = upper_kw - lower_kw
    target = (mean_kw - lower_kw) / width
    if abs(target - 0.5) <= 1e-9:
        return TruncExpModel(lower_kw, upper_kw, mean_kw, 0.0)

    sign = 1.0 if target < 0.5 else -1.0
    lo, hi = 1e-9, 64.0 / width
    # the mean fraction is decreasing in the signed rate
    f_lo = _mean_fraction(sign * lo * width)
    f_hi = _mean_fraction(sign * hi * width)
    if not min(f_lo, f_hi) <= target <= max(f_lo, f_hi):
        raise ValueError("mean_kw too close to a bound for the rate bracket")
    for _ in range(BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        f_mid = _mean_fraction(sign * mid * width)
        # moving away from zero pushes the fraction away from 0.5
        if (f_mid - target) * sign > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return TruncExpModel(lower_kw, upper_kw, mean_kw, sign * 0.5 * (lo + hi))


def sample_rated_power(model: TruncExpModel, rng: np.random.Generator, size=None):
    """Inverse-CDF draw(s) of charger rating in kW."""
    u = rng.random(size)
    out = model.ppf(u)
    return float(out) if size is None else out
