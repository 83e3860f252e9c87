"""Closed-form stability predictions and the cascade error budget.

Rates are phase variances per unit Ramsey time, so that
``sigma_y^2 = (sum of rates) / (omega0^2 tau)``.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import Scheme
from .planner import AsymptoticInvalid, max_base, prenarrow_count

__all__ = [
    "AsymptoticInvalid", "ErrorBudget", "Term", "adev_quantum_network", "adev_scheme", "error_budget",
    "fundamental_bound", "gamma_dephasing", "gamma_projection", "gamma_rounding", "gamma_slip",
]


def log_factor(n: float, k: int) -> float:
    """L' = (8/pi)^2 ln(N/K)"""
    return (8 / math.pi) ** 2 * math.log(n / k)


def gamma_projection(n0: int, n: int, ramsey_time: float) -> float:
    return 4.0 * n0 / (n**2 * ramsey_time)


def gamma_rounding(n0: int, k: int, ramsey_time: float) -> float:
    return 16 * math.pi / (k**2 * ramsey_time) * math.sqrt(n0) * math.exp(-n0 * math.pi**2 / 8)


def gamma_slip(k: int, gamma_lo: float, ramsey_time: float, tau: float) -> float:
    if gamma_lo == 0:
        return 0.0
    t = ramsey_time
    return (math.sqrt(32 * math.pi) * tau * math.sqrt(gamma_lo) / (k * t**1.5)
            * math.exp(-math.pi**2 / (2 * gamma_lo * t)))


def gamma_dephasing(n: int, gamma_ind: float) -> float:
    return 2.0 * gamma_ind / n


def ramsey_rate_sum(n: int, k: int, gamma_lo: float, tau: float, ramsey_time: float) -> float:
    """[Gamma1 + Gamma2]_min + Gamma3 as a function of the Ramsey time."""
    return log_factor(n, k) / (n**2 * ramsey_time) + gamma_slip(k, gamma_lo, ramsey_time, tau)


class Term(str, enum.Enum):
    PROJECTION = "projection"
    ROUNDING = "rounding"
    SLIP = "slip"
    DEPHASING = "dephasing"


@dataclass(frozen=True)
class ErrorBudget:
    projection: float
    rounding: float
    slip: float
    dephasing: float

    @property
    def total(self) -> float:
        return self.projection + self.rounding + self.slip + self.dephasing

    @property
    def dominant_term(self) -> Term:
        values = {Term.PROJECTION: self.projection, Term.ROUNDING: self.rounding, Term.SLIP: self.slip,
                  Term.DEPHASING: self.dephasing}
        return max(values, key=values.get)

    def to_dict(self) -> dict:
        return {"gamma1": self.projection, "gamma2": self.rounding, "gamma3": self.slip,
                "gamma_deph": self.dephasing, "dominant": self.dominant_term.value}


def error_budget(n: int, k: int, n0: int, n1: int, ramsey_time: float, gamma_lo: float, gamma_ind: float,
                 tau: float) -> ErrorBudget:
    """Projection, rounding, slip and dephasing rates for a cascade.

    ``n1`` is accepted for completeness: the rounding term assumes the
    level-0 size follows the planner rule, so it does not enter directly.
    """
    if min(n, k, n0, ramsey_time, tau) <= 0 or gamma_lo < 0 or gamma_ind < 0:
        raise ValueError("counts and times must be positive, rates non-negative")
    if ramsey_time > tau:
        raise ValueError("Ramsey time cannot exceed tau")
    return ErrorBudget(
        gamma_projection(n0, n, ramsey_time),
        gamma_rounding(n0, k, ramsey_time),
        gamma_slip(k, gamma_lo, ramsey_time, tau),
        gamma_dephasing(n, gamma_ind),
    )


def fundamental_bound(n: float, gamma_ind: float, omega0: float, tau):
    return np.sqrt(gamma_ind / np.asarray(tau, dtype=float)) / (omega0 * math.sqrt(n))


def base_d_variance(n_eff: float, k: int, gamma_ind: float, omega0: float, tau: float, base: int) -> float:
    """(1/omega0^2) [(D/2)^2 L'/(N^2 tau^2) + D/(D-1) gamma_ind/(N tau)]"""
    lp = log_factor(n_eff, k)
    return ((base / 2) ** 2 * lp / (n_eff**2 * tau**2) + base / (base - 1) * gamma_ind / (n_eff * tau)) / omega0**2


def _scalar_quantum(n: float, k: int, gamma_lo: float, gamma_ind: float, omega0: float, tau: float,
                    base: int | None, prenarrow: bool) -> float:
    if n <= k * math.e:
        raise AsymptoticInvalid(f"need N > K e, got N={n}, K={k}")
    if prenarrow:
        n_star = prenarrow_count(gamma_lo, gamma_ind, int(n), tau) if gamma_lo > 0 else 0
        n_eff = n - n_star
        if n_eff <= k * math.e:
            raise AsymptoticInvalid(f"pre-narrowing leaves too few qubits (N* = {n_star})")
        long_extra = 0.0
    else:
        # without pre-narrowing the Ramsey time is capped near 1/gamma_LO
        n_eff = n
        long_extra = 0.0
        if gamma_lo > 0:
            from .planner import optimal_ramsey_time

            t = optimal_ramsey_time(int(n), k, gamma_lo, tau)
            if t < tau:
                ell = 128 / math.pi**4 * math.log(n / k) * math.log(tau * gamma_lo * n**2 / k)
                long_extra = ell * gamma_lo / (n**2 * tau) / omega0**2
    if long_extra:
        return math.sqrt(long_extra + gamma_dephasing(n_eff, gamma_ind) / (tau * omega0**2))
    bases = [base] if base is not None else range(2, max_base(int(n_eff)) + 1)
    return math.sqrt(min(base_d_variance(n_eff, k, gamma_ind, omega0, tau, d) for d in bases))


def adev_quantum_network(n: float, k: int, gamma_lo: float, gamma_ind: float, omega0: float, tau,
                         base: int | None = 2, prenarrow: bool = True):
    """Cascade-network Allan deviation at averaging time(s) ``tau``.

    ``base=None`` picks the best base in [2, floor(sqrt N)] at each tau.
    With ``prenarrow`` the short-tau law extends past 1/gamma_LO on N - N*
    qubits; without it the long-tau ``L gamma_LO / (N^2 tau)`` form takes over
    once the optimal Ramsey time drops below tau.
    """
    taus = np.asarray(tau, dtype=float)
    out = np.array([_scalar_quantum(n, k, gamma_lo, gamma_ind, omega0, float(t), base, prenarrow)
                    for t in taus.ravel()]).reshape(taus.shape)
    return float(out) if out.ndim == 0 else out


def adev_classical(n: float, gamma_ind: float, omega0: float, tau):
    """Shot-noise-limited cooperative Ramsey network: T_cl = min(tau, 1/gamma_ind)."""
    taus = np.asarray(tau, dtype=float)
    t_cl = taus if gamma_ind == 0 else np.minimum(taus, 1.0 / gamma_ind)
    out = np.sqrt(1.0 / (n * taus * t_cl) + gamma_ind / (n * taus)) / omega0
    return float(out) if out.ndim == 0 else out


def adev_scheme(scheme: Scheme | str, n: float, k: int, gamma_lo: float, gamma_ind: float, omega0: float, tau,
                base: int | None = 2):
    scheme = Scheme(scheme)
    if scheme is Scheme.QUANTUM_COOP:
        return adev_quantum_network(n, k, gamma_lo, gamma_ind, omega0, tau, base)
    if scheme is Scheme.QUANTUM_NO_COOP:
        return adev_quantum_network(n / k, 1, gamma_lo, gamma_ind, omega0, tau, base)
    if scheme is Scheme.QUANTUM_CLASSICAL_COOP:
        return adev_quantum_network(n / k, 1, gamma_lo, gamma_ind, omega0, tau, base) / math.sqrt(k)
    if scheme is Scheme.CLASSICAL_COOP:
        return adev_classical(n, gamma_ind, omega0, tau)
    return adev_classical(n / k, gamma_ind, omega0, tau)


def branch_intersection(n: float, k: int, gamma_ind: float) -> float:
    """tau where L'/(N^2 tau^2) equals 2 gamma_ind/(N tau)."""
    return log_factor(n, k) / (2 * n * gamma_ind)


def log_slope(taus: Sequence[float], sigmas: Sequence[float]) -> float:
    return float(np.polyfit(np.log(taus), np.log(sigmas), 1)[0])


def first_tau_within(taus: np.ndarray, sigma: np.ndarray, bound: np.ndarray, factor: float) -> float:
    """Smallest tau on the grid from which sigma stays within ``factor`` of the bound."""
    ok = np.asarray(sigma) <= factor * np.asarray(bound)
    if not ok[-1]:
        return math.inf
    idx = len(ok) - 1
    while idx > 0 and ok[idx - 1]:
        idx -= 1
    return float(taus[idx])


def curves_csv(rows: Iterable[tuple[str, float, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scheme", "tau_s", "sigma_y"])
    for scheme, tau, sigma in rows:
        w.writerow([scheme, repr(float(tau)), repr(float(sigma))])
    return buf.getvalue()
