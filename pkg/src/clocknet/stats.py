"""Overlapping Allan deviation of fractional-frequency series."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import chi2

CONFIDENCE = 0.683


class SeriesTooShort(ValueError):
    """The series holds fewer than 3m samples for some requested tau."""


@dataclass(frozen=True)
class AllanPoint:
    tau: float
    sigma: float
    halfwidth: float
    m: int
    edf: float


@dataclass(frozen=True)
class AllanSeries:
    points: tuple[AllanPoint, ...]

    def __post_init__(self):
        taus = [p.tau for p in self.points]
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValueError("tau values must be strictly increasing")
        if any(p.sigma < 0 for p in self.points):
            raise ValueError("sigma must be non-negative")

    @property
    def taus(self) -> np.ndarray:
        return np.array([p.tau for p in self.points])

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([p.sigma for p in self.points])

    def __len__(self) -> int:
        return len(self.points)

    def to_csv(self, scheme: str) -> str:
        return series_csv([(scheme, self)])


def series_csv(items: Iterable[tuple[str, AllanSeries]]) -> str:
    """Same (scheme, tau_s, sigma_y) layout as the analytic export."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scheme", "tau_s", "sigma_y"])
    for scheme, series in items:
        for p in series.points:
            w.writerow([scheme, repr(float(p.tau)), repr(float(p.sigma))])
    return buf.getvalue()


def white_fm_edf(length: int, m: int) -> float:
    """Equivalent degrees of freedom of the overlapping estimator for white FM noise.

    ``length`` counts frequency samples; the phase record has one more point.
    """
    n = length + 1
    edf = (3 * (n - 1) / (2 * m) - 2 * (n - 2) / n) * 4 * m**2 / (4 * m**2 + 5)
    return max(edf, 1.0)


def _overlapping_avar(y: np.ndarray, m: int) -> float:
    c = np.concatenate([[0.0], np.cumsum(y)])
    # window sums S_i = sum(y[i:i+m])
    s = c[m:] - c[:-m]
    d = s[m:] - s[:-m]
    return float(np.sum(d**2) / (2 * m**2 * d.size))


def overlapping_allan_deviation(y: Sequence[float], cycle_time: float, taus: Sequence[float]) -> AllanSeries:
    """sigma_y(m T) with chi-square confidence half-widths at 68.3%."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError("y must be one-dimensional")
    if cycle_time <= 0:
        raise ValueError("cycle_time must be positive")
    ms = []
    for tau in taus:
        m = round(tau / cycle_time)
        if m < 1 or not math.isclose(m * cycle_time, tau, rel_tol=1e-9):
            raise ValueError(f"tau={tau} is not a positive multiple of T={cycle_time}")
        if y.size < 3 * m:
            raise SeriesTooShort(f"need at least {3 * m} samples for tau={tau}, have {y.size}")
        ms.append(m)
    points = []
    for m in ms:
        var = _overlapping_avar(y, m)
        sigma = math.sqrt(max(var, 0.0))
        edf = white_fm_edf(y.size, m)
        lo = sigma * math.sqrt(edf / chi2.ppf(0.5 + CONFIDENCE / 2, edf))
        hi = sigma * math.sqrt(edf / chi2.ppf(0.5 - CONFIDENCE / 2, edf))
        points.append(AllanPoint(m * cycle_time, sigma, (hi - lo) / 2, m, edf))
    return AllanSeries(tuple(points))


def octave_taus(length: int, cycle_time: float, max_fraction: float = 1 / 3) -> list[float]:
    """tau = 2^j T for every j with 2^j <= length * max_fraction."""
    out = []
    m = 1
    while m <= length * max_fraction:
        out.append(m * cycle_time)
        m *= 2
    return out


def trial_mean_adev(series: np.ndarray, cycle_time: float, taus: Sequence[float]) -> np.ndarray:
    """Root-mean Allan variance across independent trials, rows = trials."""
    arr = np.atleast_2d(np.asarray(series, dtype=float))
    var = np.zeros(len(taus))
    for row in arr:
        var += overlapping_allan_deviation(row, cycle_time, taus).sigmas ** 2
    return np.sqrt(var / arr.shape[0])
