"""Binomial intervals and paired comparisons for campaign outcomes."""

from __future__ import annotations

import math
from typing import Optional, Sequence

from scipy.stats import binomtest

Z95 = 1.96


def success_rate_ci(k: int, n: int, z: float = Z95) -> tuple[float, float, float]:
    """Point estimate and Wilson score interval for k successes in n trials."""
    if n < 1 or not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n and n >= 1, got k={k}, n={n}")
    p = k / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    lo = 0.0 if k == 0 else max(0.0, center - half)
    hi = 1.0 if k == n else min(1.0, center + half)
    return p, lo, hi


def sign_test(on: Sequence[bool], off: Sequence[bool]) -> tuple[int, int, float]:
    """Exact two-sided sign test over discordant pairs.

    Returns (ON-only successes, OFF-only successes, p-value). With no
    discordant pairs the p-value is 1.
    """
    if len(on) != len(off):
        raise ValueError("paired arms must have equal length")
    b = sum(1 for x, y in zip(on, off) if x and not y)
    c = sum(1 for x, y in zip(on, off) if y and not x)
    if b + c == 0:
        return 0, 0, 1.0
    return b, c, float(binomtest(b, b + c, 0.5).pvalue)


def quantile(values: Sequence[float], q: float) -> Optional[float]:
    """Linear-interpolated quantile (numpy's default rule); None when empty."""
    xs = sorted(values)
    if not xs:
        return None
    pos = q * (len(xs) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (xs[hi] - xs[lo]) * (pos - lo)


def quadratic_mean(values: Sequence[float]) -> Optional[float]:
    xs = [v for v in values if v is not None]
    if not xs:
        return None
    return math.sqrt(sum(v * v for v in xs) / len(xs))
