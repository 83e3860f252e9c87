import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clocknet import analytic
from clocknet.stats import (AllanPoint, AllanSeries, SeriesTooShort, octave_taus, overlapping_allan_deviation,
                            series_csv, trial_mean_adev)


def naive_oadev(y, m):
    """Independent route: explicit loop over overlapping window pairs."""
    n = len(y)
    terms = []
    for i in range(n - 2 * m + 1):
        a = sum(y[i:i + m]) / m
        b = sum(y[i + m:i + 2 * m]) / m
        terms.append((b - a) ** 2)
    return math.sqrt(sum(terms) / (2 * len(terms)))


def test_constant_series():
    s = overlapping_allan_deviation(np.full(100, 3.3), 1.0, [1.0, 4.0])
    assert np.allclose(s.sigmas, 0.0)


def test_alternating_series():
    y = np.array([1.0, -1.0] * 50)
    assert overlapping_allan_deviation(y, 1.0, [1.0]).sigmas[0] == pytest.approx(math.sqrt(2))


def test_white_fm_law(rng):
    v = 2.5
    y = rng.normal(0.0, math.sqrt(v), 10_000)
    taus = [1.0, 2.0, 4.0, 8.0, 16.0]
    s = overlapping_allan_deviation(y, 1.0, taus)
    expected = np.sqrt(v / np.array(taus))
    assert np.all(np.abs(s.sigmas / expected - 1) < 0.1)
    assert analytic.log_slope(taus, s.sigmas) == pytest.approx(-0.5, abs=0.05)


def test_white_pm_slope(rng):
    # first differences of white phase: the form a deadbeat-corrected output takes
    x = rng.normal(size=20_001)
    y = np.diff(x)
    taus = [4.0, 8.0, 16.0, 32.0, 64.0]
    assert analytic.log_slope(taus, overlapping_allan_deviation(y, 1.0, taus).sigmas) == pytest.approx(-1.0, abs=0.1)


@settings(max_examples=40, deadline=None)
@given(y=st.lists(st.floats(-1e3, 1e3), min_size=12, max_size=60), m=st.integers(1, 4),
       c=st.floats(-1e3, 1e3))
def test_matches_naive_and_offset_invariant(y, m, c):
    arr = np.array(y)
    got = overlapping_allan_deviation(arr, 1.0, [float(m)]).sigmas[0]
    assert got == pytest.approx(naive_oadev(y, m), rel=1e-7, abs=1e-7)
    shifted = overlapping_allan_deviation(arr + c, 1.0, [float(m)]).sigmas[0]
    assert shifted == pytest.approx(got, rel=1e-6, abs=1e-6)


def test_confidence_interval_brackets_truth(rng):
    hits = 0
    for _ in range(200):
        p = overlapping_allan_deviation(rng.normal(size=300), 1.0, [4.0]).points[0]
        hits += abs(p.sigma - 0.5) <= p.halfwidth
    # a 68.3 % interval; 200 runs leave a wide binomial margin
    assert 0.55 <= hits / 200 <= 0.8


def test_errors():
    with pytest.raises(SeriesTooShort):
        overlapping_allan_deviation(np.zeros(5), 1.0, [2.0])
    with pytest.raises(ValueError):
        overlapping_allan_deviation(np.zeros(50), 1.0, [1.5])
    with pytest.raises(ValueError):
        AllanSeries((AllanPoint(2.0, 1.0, 0.1, 2, 3.0), AllanPoint(1.0, 1.0, 0.1, 1, 3.0)))
    with pytest.raises(ValueError):
        AllanSeries((AllanPoint(1.0, -1.0, 0.1, 1, 3.0),))


def test_octave_and_trial_mean(rng):
    assert octave_taus(100, 0.5) == [0.5, 1.0, 2.0, 4.0, 8.0, 16.0]
    rows = rng.normal(size=(5, 200))
    taus = [1.0, 2.0]
    rms = trial_mean_adev(rows, 1.0, taus)
    each = np.array([overlapping_allan_deviation(r, 1.0, taus).sigmas for r in rows])
    assert np.allclose(rms, np.sqrt((each**2).mean(axis=0)))


def test_csv_layout():
    s = overlapping_allan_deviation(np.array([1.0, -1.0] * 10), 1.0, [1.0])
    lines = series_csv([("classical_coop", s)]).splitlines()
    assert lines[0] == "scheme,tau_s,sigma_y"
    assert lines[1].startswith("classical_coop,1.0,")
