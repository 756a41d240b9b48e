"""Latency statistics: exact nearest-rank percentiles over ns samples.

Nearest-rank (no interpolation) keeps reports exactly reproducible: the
p-th percentile of n sorted samples is the ceil(p*n)-th smallest.  Rank
arithmetic is done in exact rationals so no floating-point edge can shift
a rank.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

P9999 = Fraction(9999, 10000)
P99999 = Fraction(99999, 100000)
MEDIAN = Fraction(1, 2)

# below this count a p99.999 order statistic is not meaningful
MIN_SAMPLES_P99999 = 200_000


@dataclass(frozen=True)
class StatsSummary:
    count: int
    mean_ns: float
    median_ns: int
    p9999_ns: int
    p99999_ns: int
    max_ns: int

    def as_dict(self) -> dict:
        return {
            "count": self.count,
            "mean_ns": self.mean_ns,
            "median_ns": self.median_ns,
            "p9999_ns": self.p9999_ns,
            "p99999_ns": self.p99999_ns,
            "max_ns": self.max_ns,
        }


def nearest_rank(sorted_samples, q: Fraction):
    """Value at the nearest-rank q-quantile of an ascending array."""
    n = len(sorted_samples)
    if n == 0:
        raise ValueError("no samples")
    num = q.numerator * n
    rank = -(-num // q.denominator)  # ceil(q * n), exact
    rank = min(max(rank, 1), n)
    return sorted_samples[rank - 1]


def summarize(samples) -> StatsSummary:
    """Order statistics of a latency sample set (ns)."""
    a = np.asarray(samples)
    if a.size == 0:
        raise ValueError("no samples")
    s = np.sort(a)
    return StatsSummary(
        count=int(s.size),
        mean_ns=float(s.mean()),
        median_ns=int(nearest_rank(s, MEDIAN)),
        p9999_ns=int(nearest_rank(s, P9999)),
        p99999_ns=int(nearest_rank(s, P99999)),
        max_ns=int(s[-1]),
    )


def p99999_supported(count: int) -> bool:
    return count >= MIN_SAMPLES_P99999
