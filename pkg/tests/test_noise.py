import math
import warnings

import numpy as np
import pytest
from scipy import stats as sps

from clocknet import noise


def test_zero_linewidth_is_exact_zero(rng):
    assert noise.sample_lo_phase_increment(0.0, 1.0, rng) == 0.0
    assert noise.sample_dephasing_phase(8, 0.0, 1.0, rng) == 0.0


def test_lo_variance_band(rng):
    x = noise.sample_lo_phase_increment(1.0, 1.0, rng, 100_000)
    assert 0.97 <= x.var() <= 1.03


def test_dephasing_variance_band(rng):
    x = noise.sample_dephasing_phase(8, 1e-3, 1.0, rng, 100_000)
    # 3 sigma of a sample variance with 1e5 draws is 3*sqrt(2/1e5) relative
    assert abs(x.var() / 8e-3 - 1) < 3 * math.sqrt(2 / 1e5)


def test_copy_averaging_reduces_variance(rng):
    kicks = noise.sample_dephasing_phase(4, 1e-2, 1.0, rng, (20_000, 16))
    ratio = kicks.mean(axis=1).var() / kicks.var()
    assert abs(ratio * 16 - 1) < 0.05


def test_streams_are_reproducible_and_distinct():
    a = noise.stream(5, noise.LO, 0, 3).standard_normal(4)
    b = noise.stream(5, noise.LO, 0, 3).standard_normal(4)
    c = noise.stream(5, noise.LO, 0, 4).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_slip_probability_small_diffusion_value():
    # sqrt(2/pi^3) sqrt(0.1) exp(-pi^2/0.2)
    expected = math.sqrt(2 / math.pi**3) * math.sqrt(0.1) * math.exp(-math.pi**2 / 0.2)
    got = noise.phase_slip_probability(0.1, 1.0, 1.0)
    assert got == pytest.approx(expected, rel=1e-12)
    assert got == pytest.approx(2.98e-23, rel=0.01)


def test_slip_probability_linear_in_tau():
    assert noise.phase_slip_probability(0.1, 1.0, 2.0) == 2 * noise.phase_slip_probability(0.1, 1.0, 1.0)
    assert noise.phase_slip_probability(0.0, 1.0, 1.0) == 0.0


def test_slip_warning_outside_regime():
    with pytest.warns(noise.OutOfAsymptoticRegime):
        noise.phase_slip_probability(1.0, 1.0, 1.0)


@pytest.mark.parametrize("gt", [0.5, 1.0])
def test_slip_tail_matches_monte_carlo(gt, rng):
    draws = 400_000
    hits = np.mean(np.abs(noise.sample_lo_phase_increment(gt, 1.0, rng, draws)) > math.pi)
    p = noise.phase_slip_probability_exact(gt, 1.0)
    assert abs(hits - p) <= 3 * math.sqrt(p * (1 - p) / draws)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", noise.OutOfAsymptoticRegime)
        # the leading asymptotic term stays within a factor 2 of the tail here
        assert 0.5 < noise.phase_slip_probability(gt, 1.0, 1.0) / p < 2


def test_cumulative_phase_is_wiener(rng):
    m, trials = 7, 10_000
    steps = noise.sample_lo_phase_increment(0.3, 0.5, rng, (trials, m))
    total = steps.sum(axis=1)
    assert sps.kstest(total, "norm", args=(0, math.sqrt(m * 0.3 * 0.5))).pvalue > 0.01
