import math
from fractions import Fraction

import numpy as np
import pytest

from src.analysis import (
    binomial_band_check,
    empirical_tv,
    fit_log_slope,
    fit_power_law,
    mean_with_stderr,
    scaling_ratio_spread,
)


# ── Fits ─────────────────────────────────────────────────────────────────────

def test_fit_log_slope_recovers_rate():
    x = np.arange(6)
    fit = fit_log_slope(x, 2.0 * 0.5 ** x)
    assert fit["slope"] == pytest.approx(math.log(0.5))
    assert fit["intercept"] == pytest.approx(math.log(2.0))
    assert fit["r_value"] == pytest.approx(-1.0)


def test_fit_log_slope_rejects_zeros():
    with pytest.raises(ValueError, match="strictly positive"):
        fit_log_slope([0, 1], [1.0, 0.0])


def test_fit_power_law():
    x = np.array([1, 2, 4, 8])
    fit = fit_power_law(x, 3.0 * x ** 2)
    assert fit["exponent"] == pytest.approx(2.0)
    assert fit["prefactor"] == pytest.approx(3.0)


def test_fit_power_law_rejects_negative_sizes():
    with pytest.raises(ValueError, match="strictly positive"):
        fit_power_law([-1, 2], [1, 2])


# ── Summaries ────────────────────────────────────────────────────────────────

def test_mean_with_stderr():
    summary = mean_with_stderr([1, 2, 3, 4])
    assert summary["mean"] == pytest.approx(2.5)
    assert summary["stderr"] == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert summary["count"] == 4


def test_mean_with_stderr_single_value():
    assert mean_with_stderr([7.0])["stderr"] == 0.0


def test_mean_with_stderr_rejects_empty():
    with pytest.raises(ValueError, match="empty sample"):
        mean_with_stderr([])


def test_binomial_band_inside():
    result = binomial_band_check(50, 100, 0.5)
    assert result["within"]
    assert result["p_value"] == pytest.approx(1.0)
    assert result["lower"] == pytest.approx(0.35)


def test_binomial_band_outside():
    assert not binomial_band_check(90, 100, 0.5)["within"]


def test_binomial_band_rejects_zero_trials():
    with pytest.raises(ValueError, match="trials must be positive"):
        binomial_band_check(0, 0, 0.5)


def test_empirical_tv():
    law = {0: Fraction(1, 2), 1: Fraction(1, 2)}
    assert empirical_tv([0, 0, 1, 1], law) == pytest.approx(0.0)
    assert empirical_tv([0, 0, 0, 1], law) == pytest.approx(0.25)
    assert empirical_tv([2, 2], {0: Fraction(1)}) == pytest.approx(1.0)


def test_scaling_ratio_spread():
    result = scaling_ratio_spread([2, 4, 8], [8, 32, 256], lambda n: n * n)
    assert result["ratios"] == [2, 2, 4]
    assert result["spread"] == pytest.approx(2.0)
