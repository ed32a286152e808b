"""Shared estimators and confidence intervals."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, t


@dataclass
class RunningStats:
    """Welford online mean/variance that can be merged across shards."""

    n: int = 0
    mean: float = 0.0
    M2: float = 0.0  # sum of squared deviations

    def update(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.M2 += delta * (x - self.mean)
        return self

    def extend(self, values):
        for x in values:
            self.update(float(x))
        return self

    def merge(self, other):
        """Combine two summaries as if their samples had been pooled."""
        if other.n == 0:
            return RunningStats(self.n, self.mean, self.M2)
        if self.n == 0:
            return RunningStats(other.n, other.mean, other.M2)
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        M2 = self.M2 + other.M2 + delta * delta * self.n * other.n / n
        return RunningStats(n, mean, M2)

    @property
    def var(self):
        # unbiased sample variance
        if self.n < 2:
            return 0.0
        return self.M2 / (self.n - 1)

    @property
    def se(self):
        if self.n < 2:
            return 0.0
        return math.sqrt(self.var / self.n)


def z_from_confidence(level):
    """Two-sided normal quantile, e.g. 0.99 -> 2.5758..."""
    if not 0.0 < level < 1.0:
        raise ValueError("confidence level must be in (0, 1)")
    return float(norm.ppf(1.0 - (1.0 - level) / 2.0))


def t_interval(data, level=0.99):
    """Mean and Student-t bounds ``(mean, low, high)``; bounds collapse for n < 2."""
    data = np.asarray(data, dtype=float).ravel()
    n = data.size
    if n == 0:
        return float('nan'), float('nan'), float('nan')
    mean = float(np.mean(data))
    if n < 2:
        return mean, mean, mean
    s = float(np.std(data, ddof=1))
    tcrit = float(t.ppf(1.0 - (1.0 - level) / 2.0, df=n - 1))
    half_width = tcrit * s / math.sqrt(n)
    return mean, mean - half_width, mean + half_width


def percentile_interval(data, level=0.99):
    data = np.asarray(data, dtype=float).ravel()
    tail = 100.0 * (1.0 - level) / 2.0
    low, high = np.percentile(data, [tail, 100.0 - tail])
    return float(low), float(high)


def proportion(successes, trials):
    """Empirical frequency and its binomial standard error."""
    if trials <= 0:
        return float('nan'), float('nan')
    p = successes / trials
    return p, math.sqrt(max(p * (1.0 - p), 0.0) / trials)


def ratio_interval(numerators, denominators, level=0.99):
    """Delta-method interval for ``mean(numerators) / mean(denominators)``.

    Returns ``(point, low, high, se)``.
    """
    x = np.asarray(numerators, dtype=float)
    y = np.asarray(denominators, dtype=float)
    n = x.size
    mx, my = float(x.mean()), float(y.mean())
    point = mx / my
    if n < 2:
        return point, point, point, 0.0
    cov = np.cov(x, y, ddof=1)
    var = (cov[0, 0] - 2.0 * point * cov[0, 1] + point * point * cov[1, 1]) / (my * my * n)
    se = math.sqrt(max(float(var), 0.0))
    z = z_from_confidence(level)
    return point, point - z * se, point + z * se, se


def combined_se(*errors):
    return math.sqrt(math.fsum(e * e for e in errors))
