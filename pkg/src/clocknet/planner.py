"""Resource allocation: copies per level, level-0 size, Ramsey time, pre-narrowing, base.

Each optimum is first evaluated from its closed asymptotic form and then,
where a refined value is requested, polished by a bounded search of the
exact error-rate sum from :mod:`clocknet.analytic` within one octave of
the closed-form value.  For Monte Carlo runs, :func:`calibrated_plan` picks copies and depth
against the sampled estimator's own error statistics.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

from scipy.optimize import minimize_scalar

from .model import CascadePlan, InsufficientQubits, build_cascade_plan, cascade_size
from .noise import OutOfAsymptoticRegime

SQRT8 = math.sqrt(8.0)


class AsymptoticInvalid(ValueError):
    """Parameters lie outside the regime where the closed forms apply."""


class NoNarrowingNeeded(ValueError):
    """The LO is already narrower than 1/tau."""


def optimal_n0(n: int, k: int) -> tuple[int, float]:
    """(n0_opt, x_opt) with x_opt = 1/ln(pi^2 N^2 / (sqrt8 K^2)) and n0 = ceil(8/(pi^2 x))."""
    if n <= k * math.e:
        raise AsymptoticInvalid(f"need N > K e, got N={n}, K={k}")
    if n <= k * math.e**2 * (1 + 1e-9):
        warnings.warn(f"N/K = {n / k:.3g} is marginal for the asymptotic n0 rule", OutOfAsymptoticRegime,
                      stacklevel=2)
    x = 1.0 / math.log(math.pi**2 * n**2 / (SQRT8 * k**2))
    return math.ceil(8.0 / (math.pi**2 * x) - 1e-9), x


def alloc_n1(n0: int, k: int) -> tuple[int, float]:
    """(n1, alpha) with n1 = ceil(alpha K^2 n0)."""
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    alpha = max(1.0, 2.0 / (math.pi**2 * n0) * math.log(3 * k**2 * SQRT8 / (math.pi * math.sqrt(n0))))
    return math.ceil(alpha * k**2 * n0 - 1e-9), alpha


def refine_n0(n: int, k: int, ramsey_time: float = 1.0) -> int:
    """Integer minimiser of Gamma1 + Gamma2 within one octave of the closed form."""
    from .analytic import gamma_projection, gamma_rounding

    start, _ = optimal_n0(n, k)
    candidates = range(max(1, start // 2), 2 * start + 1)
    return min(candidates, key=lambda m: (gamma_projection(m, n, ramsey_time) + gamma_rounding(m, k, ramsey_time), m))


def _y_opt(n: int, k: int, gamma_lo: float, tau: float) -> float:
    arg = math.pi**1.5 / 8 * (tau * gamma_lo / k) * n**2 / math.log(n / k)
    if arg <= math.e:
        raise AsymptoticInvalid("gamma_LO tau N^2 / K is too small for the Ramsey-time rule")
    return 1.0 / math.log(arg)


def optimal_ramsey_time(n: int, k: int, gamma_lo: float, tau: float, refine: bool = False) -> float:
    """Closed-form T_opt, capped at tau; with ``refine`` the exact Gamma-sum is minimised."""
    if n <= k * math.e:
        raise AsymptoticInvalid(f"need N > K e, got N={n}, K={k}")
    if gamma_lo <= 0 or tau <= 0:
        raise AsymptoticInvalid("need gamma_LO > 0 and tau > 0")
    y = _y_opt(n, k, gamma_lo, tau)
    t_long = math.pi**2 / 2 * y / gamma_lo
    t = tau if tau <= t_long else t_long
    if not refine:
        return t
    from .analytic import ramsey_rate_sum

    hi = min(tau, 2 * t)
    lo = t / 2
    if hi <= lo:
        return tau
    res = minimize_scalar(lambda tt: ramsey_rate_sum(n, k, gamma_lo, tau, tt), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-6 * t})
    best = float(res.x)
    if ramsey_rate_sum(n, k, gamma_lo, tau, hi) <= ramsey_rate_sum(n, k, gamma_lo, tau, best):
        best = hi
    return best


@dataclass(frozen=True)
class Prenarrowing:
    n_star: int
    n_step: int
    gamma_eff: float
    gamma_target: float


def prenarrow_allocation(gamma_lo: float, gamma_ind: float, n: int, tau: float) -> Prenarrowing:
    """Qubits spent on uncorrelated narrowing stages before the cascade.

    The target linewidth is the larger of ``gamma_ind N`` and ``1/tau``;
    narrowing further buys nothing once either floor is reached.
    """
    if gamma_lo <= 1.0 / tau:
        raise NoNarrowingNeeded(f"gamma_LO={gamma_lo} is already <= 1/tau={1 / tau}")
    log_gt = math.log(gamma_lo * tau)
    raw_step = 2 * math.e / math.pi**2 * log_gt
    target = max(gamma_ind * n, 1.0 / tau)
    if target >= gamma_lo:
        return Prenarrowing(0, max(1, math.ceil(raw_step)), gamma_lo, target)
    n_star = math.ceil(raw_step * math.log(gamma_lo / target) - 1e-9)
    gamma_eff = gamma_lo * math.exp(-n_star * math.pi**2 / (2 * math.e * log_gt))
    return Prenarrowing(n_star, max(1, math.ceil(raw_step)), gamma_eff, target)


def prenarrow_count(gamma_lo: float, gamma_ind: float, n: int, tau: float) -> int:
    """N*, or 0 when no narrowing is needed."""
    try:
        return prenarrow_allocation(gamma_lo, gamma_ind, n, tau).n_star
    except NoNarrowingNeeded:
        return 0


def max_base(n: int) -> int:
    return max(2, math.isqrt(n))


def optimal_base(tau: float, tau_c: float, n: int) -> int:
    """2 below the dephasing crossover, floor(sqrt(N)) above it."""
    return 2 if tau < tau_c else max_base(n)


@dataclass(frozen=True)
class OptimalAllocation:
    n0_opt: int
    n1_opt: int
    alpha: float
    x_opt: float
    t_opt: float
    n_star: int
    n_step: int
    gamma_eff: float
    d_opt: int
    n0_refined: int
    t_refined: float

    def to_dict(self) -> dict:
        return asdict(self)


def plan_allocation(n: int, k: int, gamma_lo: float, gamma_ind: float, tau: float) -> OptimalAllocation:
    n0, x = optimal_n0(n, k)
    n1, alpha = alloc_n1(n0, k)
    try:
        pn = prenarrow_allocation(gamma_lo, gamma_ind, n, tau)
    except NoNarrowingNeeded:
        pn = Prenarrowing(0, 0, gamma_lo, 1.0 / tau)
    tau_c = math.inf if gamma_ind == 0 else 1.0 / (gamma_ind * n)
    t_opt = optimal_ramsey_time(n, k, gamma_lo, tau)
    t_ref = optimal_ramsey_time(n, k, gamma_lo, tau, refine=True)
    return OptimalAllocation(n0, n1, alpha, x, t_opt, pn.n_star, pn.n_step, pn.gamma_eff,
                             optimal_base(tau, tau_c, n), refine_n0(n, k, t_ref), t_ref)


def calibrated_plan(n: int, k: int, base: int = 2, prenarrow: int = 0, node_qubits=None, node_ids=None,
                    max_copies: int = 200, patience: int = 16) -> CascadePlan:
    """Cascade minimising the predicted COM error of the split-quadrature estimator.

    The closed-form rules assume a per-level variance of 1/n0 and fix the
    level-0 size to alpha K^2 n0; here every (n0, M) pair that fits is scored
    with :func:`clocknet.estimation.cascade_mse` and the remainder after the
    upper levels goes to level 0.
    """
    from .estimation import cascade_mse

    avail = n - prenarrow
    best, best_mse = None, math.inf
    for n0 in range(1, max_copies + 1):
        if cascade_size(k, base, n0, 1) > avail or (best is not None and n0 - best.n0 > patience):
            break
        m = 1
        while cascade_size(k, base, n0, m) <= avail:
            try:
                plan = build_cascade_plan(n, k, base, n0, avail - cascade_size(k, base, n0, m), prenarrow,
                                          node_qubits, node_ids)
            except InsufficientQubits:
                break
            mse = cascade_mse(plan)
            if mse < best_mse:
                best, best_mse = plan, mse
            m += 1
    if best is None:
        raise InsufficientQubits(f"no cascade fits in N={n} with K={k}")
    return best


def calibrated_n0(n: int, k: int, base: int = 2, prenarrow: int = 0) -> int:
    return calibrated_plan(n, k, base, prenarrow).n0


def plan_cascade(n: int, k: int, base: int = 2, prenarrow: int = 0, rule: str = "calibrated",
                 node_qubits=None, node_ids=None) -> CascadePlan:
    """Allocation for a fixed qubit budget.

    ``rule`` selects n0: ``"calibrated"`` (exact estimator statistics),
    ``"refined"`` (integer minimum of Gamma1 + Gamma2) or ``"closed"``.
    Falls back to fewer copies when the rule leaves no room for a first level.
    """
    avail = n - prenarrow
    if rule == "calibrated":
        return calibrated_plan(n, k, base, prenarrow, node_qubits, node_ids)
    if rule == "refined":
        n0 = refine_n0(avail, k)
    elif rule == "closed":
        n0 = optimal_n0(avail, k)[0]
    else:
        raise ValueError(f"unknown rule {rule!r}")
    while n0 >= 1:
        n1, _ = alloc_n1(n0, k)
        try:
            return build_cascade_plan(n, k, base, n0, n1, prenarrow, node_qubits, node_ids)
        except InsufficientQubits:
            n0 -= 1
    raise InsufficientQubits(f"no cascade fits in N={n} with K={k}")
