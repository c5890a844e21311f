"""Normal CDF/quantile and binomial confidence machinery used by certification."""

import math

from scipy import special, stats

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

# Acklam's rational approximation, |rel err| < 1.15e-9 before refinement.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def std_normal_cdf(x):
    return 0.5 * math.erfc(-x / _SQRT2)


def _poly(coeffs, t):
    acc = 0.0
    for c in coeffs:
        acc = acc * t + c
    return acc


def std_normal_quantile(p):
    """Inverse standard normal CDF for p in (0, 1)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile undefined at p={p}")
    if p > 0.5:
        # 1 - p is exact here, and the lower tail avoids cancellation
        return -std_normal_quantile(1.0 - p)
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = _poly(_C, q) / (_poly(_D, q) * q + 1.0)
    else:
        q = p - 0.5
        r = q * q
        x = _poly(_A, r) * q / (_poly(_B, r) * r + 1.0)
    # one Halley step
    e = std_normal_cdf(x) - p
    u = e * _SQRT2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def _check_counts(k, n):
    if n < 1 or not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n and n >= 1, got k={k}, n={n}")


def clopper_pearson_lower(k, n, alpha, tol=1e-12):
    """One-sided (1 - alpha) Clopper-Pearson lower bound on a binomial proportion.

    Bisection on ``P[Bin(n, p) >= k] = I_p(k, n - k + 1)``, which is
    increasing in p; the returned value is on the side where the tail is at
    most ``alpha``.
    """
    _check_counts(k, n)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if k == 0:
        return 0.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if special.betainc(k, n - k + 1, mid) <= alpha:
            lo = mid
        else:
            hi = mid
    return lo


def binom_test_two_sided(k, n):
    """Exact two-sided p-value for H0: p = 1/2."""
    _check_counts(k, n)
    tail = stats.binom.cdf(min(k, n - k), n, 0.5)
    return float(min(1.0, 2.0 * tail))
