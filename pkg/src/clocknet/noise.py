"""Seeded noise sources: LO phase diffusion and individual-qubit dephasing.

Every random draw in the package comes from a generator built by
:func:`stream`.  A child stream is addressed by the root seed plus an integer
key path such as ``(trial, node, level, copy)``; the key is folded into a
``SeedSequence`` spawn key, so a draw depends only on its address and never
on the order in which workers happen to run.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.special import erfc

# key-path tags, so different consumers never collide on the same address
LO = 1
CASCADE = 2
LEVEL0 = 3
CLASSICAL = 4
PROTOCOL = 5
SECURITY = 6
CIRCUIT = 7


class OutOfAsymptoticRegime(UserWarning):
    """The closed-form slip probability is only asymptotically valid here."""


def stream(root_seed: int, *key: int) -> np.random.Generator:
    """Generator for the child stream at ``key`` under ``root_seed``."""
    ss = np.random.SeedSequence(int(root_seed), spawn_key=tuple(int(x) for x in key))
    return np.random.Generator(np.random.PCG64(ss))


def sample_lo_phase_increment(gamma_lo: float, ramsey_time: float, rng: np.random.Generator, size=None):
    """Free-running LO phase accrued over one window: Normal(0, gamma_lo * T)."""
    if gamma_lo < 0 or ramsey_time <= 0:
        raise ValueError("need gamma_lo >= 0 and ramsey_time > 0")
    if gamma_lo == 0:
        return 0.0 if size is None else np.zeros(size)
    return rng.normal(0.0, math.sqrt(gamma_lo * ramsey_time), size)


def sample_dephasing_phase(group_size: int, gamma_ind: float, ramsey_time: float,
                           rng: np.random.Generator, size=None):
    """Collective phase kick on one GHZ copy of ``group_size`` qubits.

    Each qubit dephases independently with variance ``gamma_ind * T``, so the
    collective (summed) phase of the copy has variance ``G * gamma_ind * T``.
    """
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    if gamma_ind == 0:
        return 0.0 if size is None else np.zeros(size)
    return rng.normal(0.0, math.sqrt(group_size * gamma_ind * ramsey_time), size)


def phase_slip_probability(gamma_lo: float, ramsey_time: float, tau: float) -> float:
    """Probability that a level-0 LO phase leaves [-pi, pi] at least once in ``tau``.

    Uses the leading term of the Gaussian-tail asymptotics,
    ``(tau/T) sqrt(2/pi^3) sqrt(gT) exp(-pi^2 / (2 gT))``. Warns with
    :class:`OutOfAsymptoticRegime` once ``gT >= 0.5``.
    """
    if gamma_lo == 0:
        return 0.0
    gt = gamma_lo * ramsey_time
    if gt >= 0.5:
        warnings.warn(f"gamma_lo*T = {gt:.3g} is outside the small-diffusion regime", OutOfAsymptoticRegime,
                      stacklevel=2)
    return (tau / ramsey_time) * math.sqrt(2.0) / math.pi**1.5 * math.sqrt(gt) * math.exp(-math.pi**2 / (2 * gt))


def phase_slip_probability_exact(gamma_lo: float, ramsey_time: float, tau: float | None = None) -> float:
    """Same event from the Gaussian tail itself, ``(tau/T) erfc(pi / sqrt(2 gT))``."""
    if gamma_lo == 0:
        return 0.0
    tau = ramsey_time if tau is None else tau
    return (tau / ramsey_time) * float(erfc(math.pi / math.sqrt(2 * gamma_lo * ramsey_time)))
