"""Special functions, quadrature and statistical primitives.

Normal CDF and erfc come from scipy.special (Cephes rational
approximations, relative error near 1e-16 on [0, 27]). The tail integral
K(a) uses its integration-by-parts closed form; the quadrature routines
here exist to validate it and the other closed forms.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from functools import lru_cache

import numpy as np
from scipy import special, stats

from loctime.errors import DataError, UsageError
from loctime.models import KsResult, MomentSummary

SQRT_2PI = math.sqrt(2.0 * math.pi)

# Quadrature defaults shared by every oracle check
QUAD_TOL = 1e-10
QUAD_MAX_SPLITS = 2 ** 20


# -- Heat kernel --

def heat_kernel(x, eps: float):
    """Gaussian density with variance eps, p_eps(x)."""
    if not eps > 0:
        raise UsageError(f"eps must be positive, got {eps!r}")
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-x * x / (2.0 * eps)) / math.sqrt(2.0 * math.pi * eps)


def heat_kernel_dx(x, eps: float):
    """Spatial derivative p'_eps(x) = -(x / eps) p_eps(x)."""
    x = np.asarray(x, dtype=np.float64)
    return -(x / eps) * heat_kernel(x, eps)


# -- Tail integral --

def tail_k(a):
    """K(a) = integral over [a, inf) of z^{-3/2} (1 - e^{-z/2}) dz.

    Closed form 2 a^{-1/2} (1 - e^{-a/2}) + sqrt(2 pi) erfc(sqrt(a/2)),
    with K(0) = sqrt(2 pi).

    Raises:
        UsageError: If any a is negative.
    """
    a_arr = np.asarray(a, dtype=np.float64)
    if np.any(a_arr < 0) or np.any(np.isnan(a_arr)):
        raise UsageError("tail_k requires a >= 0")
    positive = a_arr > 0
    safe = np.where(positive, a_arr, 1.0)
    first = np.where(positive, 2.0 / np.sqrt(safe) * -np.expm1(-safe / 2.0), 0.0)
    out = first + SQRT_2PI * special.erfc(np.sqrt(a_arr / 2.0))
    return float(out) if out.ndim == 0 else out


def _tail_integrand_log(u: float) -> float:
    z = math.exp(u)
    return z ** -0.5 * -math.expm1(-z / 2.0)


def tail_k_quadrature(a: float, upper: float, tol: float = QUAD_TOL) -> float:
    """Adaptive Simpson value of the K integrand over [a, upper], in log z."""
    if not 0 < a < upper:
        raise UsageError(f"need 0 < a < upper, got a={a!r}, upper={upper!r}")
    value, _ = adaptive_simpson(_tail_integrand_log, math.log(a), math.log(upper), tol=tol)
    return value


# -- g kernel --

def g_kernel(x, y, h: float):
    """(h-|x|-|y|)_+ on xy < 0, min((h-|x|)_+, (h-|y|)_+) on xy >= 0."""
    if not h > 0:
        raise UsageError(f"h must be positive, got {h!r}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ax, ay = np.abs(x), np.abs(y)
    opposite = np.maximum(h - (ax + ay), 0.0)
    same = np.minimum(np.maximum(h - ax, 0.0), np.maximum(h - ay, 0.0))
    out = np.where(x * y < 0, opposite, same)
    return float(out) if out.ndim == 0 else out


def g_kernel_square_integral(h: float, tol: float = 1e-12) -> float:
    """Nested adaptive Simpson value of the integral of g_h^2 over [-h, h]^2.

    Inner breakpoints sit on every kink line, so each inner piece is a
    polynomial Simpson integrates exactly.
    """
    def inner(x: float) -> float:
        ax = abs(x)
        kinks = (0.0, ax, -ax, h - ax, ax - h)
        value, _ = adaptive_simpson(
            lambda y: g_kernel(x, y, h) ** 2, -h, h, tol=tol * h ** 3, breakpoints=kinks,
        )
        return value

    value, _ = adaptive_simpson(
        inner, -h, h, tol=tol * h ** 4, breakpoints=(-h / 2.0, 0.0, h / 2.0),
    )
    return value


# -- Normal distribution --

def normal_cdf(x):
    """Standard normal CDF."""
    out = special.ndtr(np.asarray(x, dtype=np.float64))
    return float(out) if np.ndim(out) == 0 else out


def erfc(x):
    """Complementary error function."""
    out = special.erfc(np.asarray(x, dtype=np.float64))
    return float(out) if np.ndim(out) == 0 else out


def normal_partial_expectation(u):
    """psi(u) = u N(u) + phi(u), the antiderivative of the normal CDF."""
    u = np.asarray(u, dtype=np.float64)
    return u * special.ndtr(u) + np.exp(-0.5 * u * u) / SQRT_2PI


# -- Quadrature --

def adaptive_simpson(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = QUAD_TOL,
    breakpoints: Sequence[float] = (),
    max_splits: int = QUAD_MAX_SPLITS,
) -> tuple[float, float]:
    """Adaptive Simpson's rule with Richardson correction.

    The interval is first cut at any breakpoints inside (a, b); each piece
    is then bisected until the local error estimate drops below its share
    of the tolerance, or the total number of splits reaches max_splits.

    Args:
        f: Scalar integrand.
        a: Lower bound.
        b: Upper bound.
        tol: Absolute error tolerance.
        breakpoints: Points where f may have kinks.
        max_splits: Cap on interval bisections.

    Returns:
        Tuple of (integral_value, error_estimate).
    """
    if a == b:
        return 0.0, 0.0
    if a > b:
        value, err = adaptive_simpson(f, b, a, tol, breakpoints, max_splits)
        return -value, err

    cuts = sorted({a, b, *(p for p in breakpoints if a < p < b)})
    width = b - a
    pieces = []
    for lo, hi in zip(cuts, cuts[1:]):
        mid = 0.5 * (lo + hi)
        flo, fmid, fhi = f(lo), f(mid), f(hi)
        whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)
        pieces.append((lo, hi, flo, fmid, fhi, whole, tol * (hi - lo) / width))

    total: list[float] = []
    error = 0.0
    splits = 0
    while pieces:
        lo, hi, flo, fmid, fhi, whole, local_tol = pieces.pop()
        mid = 0.5 * (lo + hi)
        left_mid = 0.5 * (lo + mid)
        right_mid = 0.5 * (mid + hi)
        fl, fr = f(left_mid), f(right_mid)
        left = (mid - lo) / 6.0 * (flo + 4.0 * fl + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * fr + fhi)
        estimate = (left + right - whole) / 15.0
        if (
            abs(estimate) <= local_tol
            or splits >= max_splits
            or mid <= lo or hi <= mid
        ):
            total.append(left + right + estimate)
            error += abs(estimate)
            continue
        splits += 1
        pieces.append((lo, mid, flo, fl, fmid, left, local_tol / 2.0))
        pieces.append((mid, hi, fmid, fr, fhi, right, local_tol / 2.0))

    return math.fsum(total), error


@lru_cache(maxsize=None)
def _legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(n)
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return nodes, weights


def gauss_legendre(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre nodes and weights mapped to [a, b]."""
    nodes, weights = _legendre(n)
    half = 0.5 * (b - a)
    return half * nodes + 0.5 * (a + b), half * weights


# -- Oracles --

def self_lp_mean_oracle(p: int, t: float) -> float:
    """E of the integral of (L_t^x)^p dx for p in {2, 3}, by quadrature.

    Both are multiple time integrals of heat kernels at zero; substituting
    each gap g = w^2 removes the inverse-square-root singularities.
    """
    root = math.sqrt(t)
    if p == 2:
        # 2 * integral over gaps g < t of (t - g) p_g(0) dg
        value, _ = adaptive_simpson(lambda w: 2.0 * (t - w * w) * 2.0 / SQRT_2PI, 0.0, root)
        return value
    if p == 3:
        # 6 * integral over g1 + g2 < t of (t - g1 - g2) p_g1(0) p_g2(0)
        def inner(w1: float) -> float:
            top = math.sqrt(max(t - w1 * w1, 0.0))
            value, _ = adaptive_simpson(
                lambda w2: 6.0 * 4.0 * (t - w1 * w1 - w2 * w2) / (2.0 * math.pi), 0.0, top,
            )
            return value

        value, _ = adaptive_simpson(inner, 0.0, root)
        return value
    raise UsageError(f"p must be 2 or 3, got {p!r}")


# -- Statistics --

def _clean(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if np.isnan(x).any():
        raise DataError("samples contain NaN")
    return x


def ks_normal(samples) -> KsResult:
    """Kolmogorov-Smirnov test of samples against N(0, 1).

    The p-value is the asymptotic Kolmogorov survival function at D sqrt(n).

    Raises:
        UsageError: If fewer than 8 samples are given.
        DataError: If any sample is NaN.
    """
    x = _clean(samples)
    if x.size < 8:
        raise UsageError(f"ks_normal needs at least 8 samples, got {x.size}")
    result = stats.kstest(np.sort(x), "norm", method="asymp")
    p_value = min(max(float(result.pvalue), 0.0), 1.0)
    return KsResult(statistic=float(result.statistic), p_value=p_value, n=int(x.size))


def sample_moments(samples) -> MomentSummary:
    """Mean, unbiased variance, skewness and raw kurtosis with standard errors.

    Raises:
        UsageError: If fewer than 2 samples are given.
        DataError: If any sample is NaN.
    """
    x = np.sort(_clean(samples))
    n = int(x.size)
    if n < 2:
        raise UsageError(f"sample_moments needs at least 2 samples, got {n}")
    mean = math.fsum(x.tolist()) / n
    centered = x - mean
    m2 = math.fsum((centered ** 2).tolist()) / n
    m4 = math.fsum((centered ** 4).tolist()) / n
    variance = m2 * n / (n - 1)
    if m2 > 0:
        skewness = float(stats.skew(x, bias=True))
        kurtosis = float(stats.kurtosis(x, fisher=False, bias=True))
    else:
        skewness = kurtosis = float("nan")
    return MomentSummary(
        n=n,
        mean=mean,
        variance=variance,
        skewness=skewness,
        kurtosis=kurtosis,
        se_mean=math.sqrt(variance / n),
        se_variance=math.sqrt(max(m4 - m2 * m2, 0.0) / n),
        se_skewness=math.sqrt(6.0 / n),
        se_kurtosis=math.sqrt(24.0 / n),
    )


def loglog_slope(pairs: Sequence[tuple[float, float]]) -> float:
    """OLS slope of log y against log x.

    Raises:
        UsageError: If any coordinate is non-positive or fewer than 2 distinct x.
    """
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise UsageError("pairs must be a sequence of (x, y)")
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
        raise UsageError("log-log regression needs positive finite coordinates")
    if np.unique(arr[:, 0]).size < 2:
        raise UsageError("log-log regression needs at least two distinct x values")
    return float(stats.linregress(np.log(arr[:, 0]), np.log(arr[:, 1])).slope)
