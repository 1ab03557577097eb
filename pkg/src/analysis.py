from fractions import Fraction

import numpy as np
import pandas as pd
from scipy import stats


def fit_log_slope(x, y) -> dict:
    """
    Least-squares slope of log(y) against x.

    Args:
        x: Abscissae, e.g. sweep indices.
        y: Positive values, e.g. survival probabilities.

    Returns:
        Dictionary with slope, intercept, r_value and stderr.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("fit_log_slope needs strictly positive values")

    result = stats.linregress(x, np.log(y))
    return {
        "slope": float(result.slope),
        "intercept": float(result.intercept),
        "r_value": float(result.rvalue),
        "stderr": float(result.stderr),
    }


def fit_power_law(x, y) -> dict:
    """
    Fits y ≈ prefactor · x^exponent on a log-log scale.

    Args:
        x: Positive sizes, e.g. deck sizes n.
        y: Positive measurements at those sizes.

    Returns:
        Dictionary with exponent, prefactor and r_value.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("fit_power_law needs strictly positive values")

    result = stats.linregress(np.log(x), np.log(y))
    return {
        "exponent": float(result.slope),
        "prefactor": float(np.exp(result.intercept)),
        "r_value": float(result.rvalue),
    }


def mean_with_stderr(values) -> dict:
    """
    Sample mean with its standard error.

    Args:
        values: One-dimensional sample.

    Returns:
        Dictionary with mean, stderr and count.
    """
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        raise ValueError("Cannot summarize an empty sample")
    stderr = float(stats.sem(values)) if len(values) > 1 else 0.0
    return {"mean": float(values.mean()), "stderr": stderr, "count": len(values)}


def binomial_band_check(successes: int, trials: int, p: float, sigmas: float = 3.0) -> dict:
    """
    Checks whether an observed success count is consistent with probability p.

    H0: The successes are Binomial(trials, p).

    Args:
        successes: Observed successes.
        trials: Number of trials.
        p: Hypothesized success probability.
        sigmas: Half-width of the acceptance band in standard deviations.

    Returns:
        Dictionary with the observed fraction, band edges, two-sided p-value and
        whether the observation falls inside the band.
    """
    if trials <= 0:
        raise ValueError("trials must be positive")
    observed = successes / trials
    half_width = sigmas * np.sqrt(p * (1 - p) / trials)
    test = stats.binomtest(successes, trials, p)

    return {
        "observed": observed,
        "expected": p,
        "lower": p - half_width,
        "upper": p + half_width,
        "p_value": float(test.pvalue),
        "within": bool(p - half_width <= observed <= p + half_width),
    }


def empirical_tv(samples, law: dict) -> float:
    """
    Total variation between the empirical law of integer samples and an exact law.

    Args:
        samples: Integer observations.
        law: Mapping value -> probability (Fractions or floats).

    Returns:
        Half the L1 distance over the union of supports.
    """
    counts = pd.Series(np.asarray(samples)).value_counts(normalize=True)
    support = set(counts.index.tolist()) | set(law)
    return 0.5 * sum(abs(float(counts.get(v, 0.0)) - float(law.get(v, Fraction(0)))) for v in support)


def scaling_ratio_spread(sizes, values, scale) -> dict:
    """
    Ratios values[i] / scale(sizes[i]) and their max/min spread.

    Used for shape checks such as growth like n² log n.
    """
    ratios = [v / scale(n) for n, v in zip(sizes, values)]
    return {"ratios": ratios, "spread": max(ratios) / min(ratios)}
