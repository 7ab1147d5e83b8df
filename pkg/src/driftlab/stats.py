"""Small statistical helpers: Wilson intervals, KS distance, standard errors."""
import math

import numpy as np
from scipy import stats


def wilson_interval(hits, n, level=0.95, one_sided=False):
    """Wilson score interval for a binomial proportion.

    With ``one_sided=True`` the returned pair is (lower, upper) of the
    one-sided bounds at ``level`` each, i.e. z = Phi^{-1}(level).
    """
    if n <= 0:
        return (0.0, 1.0)
    z = stats.norm.ppf(level if one_sided else 0.5 + level / 2)
    p = hits / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, centre - half), min(1.0, centre + half))


def mean_and_stderr(values):
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n < 2:
        return float(values.mean()) if n else math.nan, math.nan
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(n))


def ks_statistic(samples, cdf):
    """Two-sided Kolmogorov-Smirnov distance between samples and ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.shape[0]
    F = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def ks_critical(n, level=0.95):
    """Asymptotic critical value of the KS statistic."""
    return float(stats.kstwobign.ppf(level) / math.sqrt(n))
