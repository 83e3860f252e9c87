"""Sampling model of the cascaded GHZ interrogation and digit reconstruction.

A level-``i`` GHZ copy of ``m_i = K D^(i-1)`` qubits picks up the collective
phase ``m_i * Phi_LO``.  Its parity is +1 with probability
``(1 + cos(chi + phase)) / 2``; half of the ``n0`` copies at each level are
prepared with ``chi = 0`` and half with ``chi = pi/2`` so that the level
yields an estimate of ``m_i Phi_LO`` modulo ``2 pi``.

Digits are extracted in the shifted frame ``theta_i = m_i (Phi_LO + pi)
mod 2 pi``.  A level phase measured in ``[-pi, pi)`` is moved into this frame
by adding ``m_i * pi``; in that frame the digit quantities
``[K theta_0 - theta_1] / 2 pi`` and ``[D theta_{i-1} - theta_i] / 2 pi`` are
exact integers for noiseless input.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.stats import binom

from . import noise
from .model import CascadePlan

TWO_PI = 2 * math.pi
SUSPECT_MARGIN = 0.1
SLIP_MARGIN = 0.1 * math.pi


class DegenerateEstimate(ArithmeticError):
    """Both quadrature means vanish, so the phase is indeterminate."""


def wrap(x):
    """Map onto [-pi, pi)."""
    return np.mod(np.asarray(x) + math.pi, TWO_PI) - math.pi


def sample_parity(phi: float, chi: float, rng: np.random.Generator, size=None):
    """+1 with probability (1 + cos(chi + phi)) / 2, else -1."""
    p_plus = 0.5 * (1 + np.cos(chi + np.asarray(phi)))
    shape = size if size is not None else np.shape(p_plus)
    u = rng.random(shape)
    out = np.where(u < p_plus, 1, -1)
    return int(out) if np.ndim(out) == 0 else out


def sample_node_parities(phase: float, chi: float, k: int, rng: np.random.Generator) -> np.ndarray:
    """Per-node partial parities of one GHZ copy spread over ``k`` nodes.

    The x-basis bits of a GHZ are uniformly random subject only to their
    product, so every proper subset of node parities is uniform; the center's
    own parity (index 0) completes the product.
    """
    total = sample_parity(phase, chi, rng)
    parts = rng.choice(np.array([-1, 1]), size=k)
    parts[0] = total * int(np.prod(parts[1:]))
    return parts


def _phase_from_means(mean_cos, mean_sin):
    return wrap(np.arctan2(-np.asarray(mean_sin, dtype=float), np.asarray(mean_cos, dtype=float)))


def estimate_level_phase(parities_cos: Sequence[int], parities_sin: Sequence[int]) -> float:
    """atan2(-<p_sin>, <p_cos>) in [-pi, pi).

    Raises :class:`DegenerateEstimate` when both means are exactly zero.
    """
    if len(parities_cos) == 0 or len(parities_sin) == 0:
        raise ValueError("both quadratures need at least one parity")
    c = float(np.mean(parities_cos))
    s = float(np.mean(parities_sin))
    if c == 0 and s == 0:
        raise DegenerateEstimate("both quadrature means are zero")
    return float(_phase_from_means(c, s))


@dataclass(frozen=True)
class LevelEstimate:
    level: int
    phase: float
    samples: int
    degenerate: bool = False


@dataclass
class InterrogationRecord:
    levels: list[LevelEstimate]
    y1: int
    z: list[int]  # Z_2 .. Z_M
    estimate: float
    rounding_suspect: bool = False
    slip_suspect: bool = False
    degenerate: bool = False
    node_level0: list[float] = field(default_factory=list)
    true_phase: float | None = None

    def to_dict(self) -> dict:
        return {
            "levels": [{"level": l.level, "phase": l.phase, "samples": l.samples} for l in self.levels],
            "y1": self.y1,
            "z": self.z,
            "estimate": self.estimate,
            "true_phase": self.true_phase,
            "flags": {
                "rounding_suspect": self.rounding_suspect,
                "slip_suspect": self.slip_suspect,
                "degenerate": self.degenerate,
            },
        }


def level_multipliers(k: int, base: int, levels: int) -> np.ndarray:
    """(1, K, K D, ..., K D^(M-1)): phase multiplier of each level."""
    return np.array([1] + [k * base ** (i - 1) for i in range(1, levels + 1)], dtype=float)


@dataclass
class Reconstruction:
    estimate: np.ndarray
    y1: np.ndarray
    z: np.ndarray  # shape (B, M-1)
    rounding_suspect: np.ndarray


def reconstruct_batch(level_phases: np.ndarray, k: int, base: int = 2) -> Reconstruction:
    """Vectorized digit reconstruction; ``level_phases`` has shape (B, M+1)."""
    ph = np.atleast_2d(np.asarray(level_phases, dtype=float))
    levels = ph.shape[1] - 1
    if levels < 1:
        raise ValueError("need level 0 and at least one cascade level")
    mult = level_multipliers(k, base, levels)
    theta = np.mod(ph + mult * math.pi, TWO_PI)
    theta[:, 0] = ph[:, 0] + math.pi
    q_y = (k * theta[:, 0] - theta[:, 1]) / TWO_PI
    q_z = (base * theta[:, 1:-1] - theta[:, 2:]) / TWO_PI
    quantities = np.column_stack([q_y, q_z])
    digits = np.round(quantities).astype(np.int64)  # numpy rounds half to even
    frac = quantities - np.floor(quantities)
    suspect = np.any(np.abs(frac - 0.5) < SUSPECT_MARGIN, axis=1)

    scale = base ** (levels - 1)
    weights = base ** np.arange(levels - 1, -1, -1, dtype=np.int64)  # D^(M-1), ..., D^0
    total = np.mod(digits @ weights, k * scale)
    y1 = total // scale
    rest = total % scale
    z = np.zeros((ph.shape[0], levels - 1), dtype=np.int64)
    for i in range(levels - 1):
        place = base ** (levels - 2 - i)
        z[:, i] = rest // place
        rest = rest % place
    theta_lo = (TWO_PI / k) * (total / scale + theta[:, -1] / (TWO_PI * scale))
    return Reconstruction(wrap(theta_lo - math.pi), y1, z, suspect)


def reconstruct_phase(level_estimates: Sequence[float | LevelEstimate], k: int, base: int = 2) -> InterrogationRecord:
    """Digits Y1, Z_2..Z_M and the final COM phase estimate from level phases.

    Level ``i`` holds the measured ``m_i Phi_LO`` in [-pi, pi). Raw digit
    roundings are combined into one integer modulo ``K D^(M-1)`` before being
    split again, so a borrow or carry from a neighbouring digit leaves every
    digit inside its range.
    """
    ests = [e if isinstance(e, LevelEstimate) else LevelEstimate(i, float(e), 0)
            for i, e in enumerate(level_estimates)]
    rec = reconstruct_batch(np.array([[e.phase for e in ests]]), k, base)
    return InterrogationRecord(
        levels=ests,
        y1=int(rec.y1[0]),
        z=[int(v) for v in rec.z[0]],
        estimate=float(rec.estimate[0]),
        rounding_suspect=bool(rec.rounding_suspect[0]),
        degenerate=any(e.degenerate for e in ests),
    )


def exact_level_phases(phi_lo: float, k: int, levels: int, base: int = 2) -> np.ndarray:
    """Noiseless level phases: Phi_0 = Phi_LO, Phi_i = K D^(i-1) Phi_LO mod [-pi, pi)."""
    return wrap(level_multipliers(k, base, levels) * phi_lo)


# ---------------------------------------------------------------------------
# sampling the cascade


def _quadrature_estimate(phase: np.ndarray, n_cos: int, n_sin: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Estimate ``phase`` (shape (B,)) from n_cos + n_sin single-shot parities.

    ``phase`` may carry a trailing copy axis (B, n) holding per-copy phases,
    copies ``[:n_cos]`` use chi = 0 and the rest chi = pi/2.
    """
    ph = np.asarray(phase, dtype=float)
    if ph.ndim == 1:
        ph = ph[:, None]
    ph = np.broadcast_to(ph, (ph.shape[0], n_cos + n_sin))
    chi = np.zeros(ph.shape[1])
    chi[n_cos:] = math.pi / 2
    p_plus = 0.5 * (1 + np.cos(ph + chi))
    par = np.where(rng.random(ph.shape) < p_plus, 1.0, -1.0)
    mc = par[:, :n_cos].mean(axis=1) if n_cos else np.zeros(ph.shape[0])
    ms = par[:, n_cos:].mean(axis=1) if n_sin else np.zeros(ph.shape[0])
    degenerate = (mc == 0) & (ms == 0)
    return np.where(degenerate, 0.0, _phase_from_means(mc, ms)), degenerate


def split_quadratures(n: int) -> tuple[int, int]:
    """Copies measured with chi = 0 and with chi = pi/2."""
    return n - n // 2, n // 2


@dataclass
class BatchInterrogation:
    estimate: np.ndarray
    true_phase: np.ndarray
    level_phases: np.ndarray
    node_level0: np.ndarray
    rounding_suspect: np.ndarray
    slip_suspect: np.ndarray
    degenerate: np.ndarray
    reconstruction: Reconstruction


def interrogate_batch(plan: CascadePlan, node_phases: np.ndarray, gamma_ind: float, ramsey_time: float,
                      rng: np.random.Generator) -> BatchInterrogation:
    """One Ramsey cycle for a batch of phase vectors, ``node_phases`` shape (B, K)."""
    phases = np.atleast_2d(np.asarray(node_phases, dtype=float))
    b, k = phases.shape
    if k != plan.k:
        raise ValueError(f"plan has {plan.k} nodes, got {k} phases")
    weights = np.array(plan.weights())
    true_com = phases @ weights
    level_est = np.zeros((b, plan.levels + 1))
    degenerate = np.zeros(b, dtype=bool)

    node0 = np.zeros((b, k))
    for j, nid in enumerate(plan.node_ids):
        n_j = plan.per_node_allocation[nid][0]
        if n_j == 0:
            continue
        nc, ns = split_quadratures(n_j)
        kicks = noise.sample_dephasing_phase(1, gamma_ind, ramsey_time, rng, (b, n_j)) if gamma_ind else 0.0
        est, deg = _quadrature_estimate(phases[:, j:j + 1] + kicks, nc, ns, rng)
        node0[:, j] = est
        degenerate |= deg
    level_est[:, 0] = node0 @ weights

    nc, ns = split_quadratures(plan.n0)
    for i in range(1, plan.levels + 1):
        shares = np.array([plan.copy_shares[nid][i - 1] for nid in plan.node_ids], dtype=float)
        collective = phases @ shares
        size = int(shares.sum())
        kicks = noise.sample_dephasing_phase(size, gamma_ind, ramsey_time, rng, (b, plan.n0)) if gamma_ind else 0.0
        est, deg = _quadrature_estimate(collective[:, None] + kicks, nc, ns, rng)
        level_est[:, i] = est
        degenerate |= deg

    rec = reconstruct_batch(level_est, plan.k, plan.base)
    slip = np.any(np.abs(node0) > math.pi - SLIP_MARGIN, axis=1)
    return BatchInterrogation(rec.estimate, true_com, level_est, node0, rec.rounding_suspect, slip,
                              degenerate, rec)


def run_interrogation_cycle(plan: CascadePlan, node_phases: Sequence[float], gamma_ind: float,
                            ramsey_time: float, rng: np.random.Generator) -> InterrogationRecord:
    """Sample one full cascade interrogation and reconstruct the COM phase."""
    phases = np.asarray(node_phases, dtype=float)
    if phases.shape != (plan.k,):
        raise ValueError(f"need {plan.k} node phases")
    out = interrogate_batch(plan, phases[None, :], gamma_ind, ramsey_time, rng)
    nc, ns = split_quadratures(plan.n0)
    samples = [plan.n1] + [plan.n0] * plan.levels
    levels = [LevelEstimate(i, float(out.level_phases[0, i]), samples[i]) for i in range(plan.levels + 1)]
    return InterrogationRecord(
        levels=levels,
        y1=int(out.reconstruction.y1[0]),
        z=[int(v) for v in out.reconstruction.z[0]],
        estimate=float(out.estimate[0]),
        rounding_suspect=bool(out.rounding_suspect[0]),
        slip_suspect=bool(out.slip_suspect[0]),
        degenerate=bool(out.degenerate[0]),
        node_level0=[float(v) for v in out.node_level0[0]],
        true_phase=float(out.true_phase[0]),
    )


# ---------------------------------------------------------------------------
# exact statistics of the quadrature estimator


@dataclass(frozen=True)
class EstimatorProfile:
    """Error distribution of the split-quadrature estimator, averaged over a uniform phase."""

    copies: int
    errors: np.ndarray
    probs: np.ndarray

    @property
    def mse(self) -> float:
        return float(np.sum(self.probs * self.errors**2))

    @property
    def variance_constant(self) -> float:
        """c in Var ~= c / n"""
        return self.mse * self.copies

    def tail(self, tolerance: float) -> float:
        """P(|error| > tolerance)"""
        return float(np.sum(self.probs[np.abs(self.errors) > tolerance]))


PROFILE_BINS = 4096
EXACT_PROFILE_LIMIT = 64


@lru_cache(maxsize=512)
def estimator_profile(copies: int, grid: int = 512) -> EstimatorProfile:
    """Enumerate every (cos, sin) count pair for ``copies`` single-shot parities.

    The error law is accumulated on a fixed histogram of ``PROFILE_BINS``
    bins over [-pi, pi), each bin represented by its probability-weighted
    mean error.
    """
    nc, ns = split_quadratures(copies)
    phi = (np.arange(grid) + 0.5) / grid * TWO_PI - math.pi
    kc = np.arange(nc + 1)
    ks = np.arange(ns + 1)
    mc = (2 * kc / nc - 1) if nc else np.zeros(1)
    ms = (2 * ks / ns - 1) if ns else np.zeros(1)
    est = _phase_from_means(mc[:, None], ms[None, :])
    est = np.where((mc[:, None] == 0) & (ms[None, :] == 0), 0.0, est).ravel()
    mass = np.zeros(PROFILE_BINS)
    moment = np.zeros(PROFILE_BINS)
    for row in np.array_split(np.arange(grid), max(1, grid * est.size // 2_000_000)):
        pc = binom.pmf(kc[None, :], nc, 0.5 * (1 + np.cos(phi[row]))[:, None])
        ps = binom.pmf(ks[None, :], ns, 0.5 * (1 - np.sin(phi[row]))[:, None]) if ns else np.ones((row.size, 1))
        prob = (pc[:, :, None] * ps[:, None, :]).reshape(row.size, -1) / grid
        err = wrap(est[None, :] - phi[row, None])
        idx = np.minimum(((err + math.pi) / TWO_PI * PROFILE_BINS).astype(np.int64), PROFILE_BINS - 1)
        mass += np.bincount(idx.ravel(), prob.ravel(), PROFILE_BINS)
        moment += np.bincount(idx.ravel(), (prob * err).ravel(), PROFILE_BINS)
    keep = mass > 0
    return EstimatorProfile(copies, moment[keep] / mass[keep], mass[keep])


def _cdf(profile: EstimatorProfile):
    order = np.argsort(profile.errors)
    return profile.errors[order], np.cumsum(profile.probs[order])


def _prob_within(values: np.ndarray, sorted_err: np.ndarray, cum: np.ndarray, limit: float) -> np.ndarray:
    """P(|v - b| <= limit) for each v, with b drawn from the sorted discrete law."""
    hi = np.searchsorted(sorted_err, values + limit, side="right")
    lo = np.searchsorted(sorted_err, values - limit, side="left")
    padded = np.concatenate([[0.0], cum])
    return padded[hi] - padded[lo]


@lru_cache(maxsize=256)
def digit_misround_probability(copies: int, base: int = 2) -> float:
    """P(|D e_{i-1} - e_i| > pi) for two independent level errors of ``copies`` parities each."""
    prof = estimator_profile(copies)
    sorted_err, cum = _cdf(prof)
    within = _prob_within(base * prof.errors, sorted_err, cum, math.pi)
    return float(max(0.0, 1.0 - np.sum(prof.probs * within)))


def first_digit_misround_probability(level0_variance: float, copies: int, k: int) -> float:
    """P(|K e_0 - e_1| > pi) with a Gaussian COM level-0 error of the given variance."""
    from scipy.stats import norm

    prof = estimator_profile(copies)
    s = k * math.sqrt(level0_variance)
    if s == 0:
        return prof.tail(math.pi)
    b = prof.errors
    p_in = norm.cdf((math.pi + b) / s) - norm.cdf((-math.pi + b) / s)
    return float(max(0.0, 1.0 - np.sum(prof.probs * p_in)))


def level0_variance(plan: CascadePlan) -> float:
    """Variance of the weighted level-0 COM estimate."""
    w = np.array(plan.weights())
    var = 0.0
    for wj, nid in zip(w, plan.node_ids):
        n_j = plan.per_node_allocation[nid][0]
        if n_j == 0:
            node_var = math.pi**2 / 3
        elif n_j <= EXACT_PROFILE_LIMIT:
            node_var = estimator_profile(n_j).mse
        else:
            # phase-averaged (cos^4 + sin^4) * 2/n
            node_var = 1.5 / n_j
        var += wj**2 * node_var
    return var


def cascade_mse(plan: CascadePlan) -> float:
    """Predicted mean-square COM phase error: top-level projection plus digit slips."""
    k, d, m = plan.k, plan.base, plan.levels
    top = estimator_profile(plan.n0).mse / (k * d ** (m - 1)) ** 2
    p_y = first_digit_misround_probability(level0_variance(plan), plan.n0, k)
    p_z = digit_misround_probability(plan.n0, d)
    rounding = p_y * (TWO_PI / k) ** 2 + sum(p_z * (TWO_PI / (k * d ** (i - 1))) ** 2 for i in range(2, m + 1))
    return top + rounding
