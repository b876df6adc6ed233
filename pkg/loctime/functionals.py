"""Path functionals of the local-time field.

- modulus_lp / self_lp: the L^p modulus of continuity and the L^p norm of L_t
- gamma_eps / gamma_rep: the smoothed and the Ito forms of the
  self-intersection local-time derivative at zero
- phi_terms / clark_ocone_sum: the Clark-Ocone integrand of the cubic
  modulus and its left-endpoint Ito sum
- reversed_tanaka_residual / mean_tanaka_residual: Tanaka's formula for the
  time-reversed path

Forward Ito sums evaluate integrands at the left endpoint; backward sums
evaluate at the right endpoint in forward time.
"""

from __future__ import annotations

import logging
import math
from typing import Sequence, Union

import numpy as np

from loctime import numerics
from loctime.errors import EndpointError, UsageError
from loctime.local_time import (
    density_at,
    field_at_step,
    lattice_steps,
    shifted_differences,
)
from loctime.models import (
    BreakpointDensity,
    BrownianPath,
    ClarkOconeResult,
    Estimator,
    GammaEstimate,
    GammaMethod,
    LocalTimeField,
    ModulusStat,
    PhiSample,
    PrefixFieldStream,
    SpatialGrid,
)
from loctime.path_engine import subsample

logger = logging.getLogger(__name__)

FieldSource = Union[LocalTimeField, BreakpointDensity]

DEFAULT_GUARD = 1.0 / 64.0
GAMMA_MAX_STEPS = 2 ** 13
PHI3_NODES = 32
MIN_PHI_EVALUATIONS = 128

_PHI_SCALE = 12.0 / numerics.SQRT_2PI


def _check_p(p: int) -> None:
    if p not in (2, 3):
        raise UsageError(f"p must be 2 or 3, got {p!r}")


# -- Modulus and norms --

def modulus_lp(source: FieldSource, h: float, p: int, absolute: bool = False) -> ModulusStat:
    """Integral of (L^{x+h} - L^x)^p dx (or of its absolute value).

    On a binned field h must be a lattice multiple of dx and the shift is
    exact. On a breakpoint density the integral is evaluated piece by piece
    over the merged breakpoints {b - h/2} and {b + h/2}, in coordinates
    centered between x and x + h; the sum is correctly rounded, so the
    result is exactly antisymmetric for p = 3 under path negation.

    Raises:
        UsageError: If p is not 2 or 3, or h is invalid for the representation.
    """
    _check_p(p)
    if isinstance(source, LocalTimeField):
        k = lattice_steps(h, source.grid.dx)
        d = shifted_differences(source.values, k)
        terms = np.abs(d) ** p if absolute else d ** p
        value = math.fsum(terms.tolist()) * source.grid.dx
        return ModulusStat(h=h, p=p, value=value, estimator=Estimator.BINNED)

    if not h > 0:
        raise UsageError(f"h must be positive, got {h!r}")
    b = source.breakpoints
    if b.size == 0:
        return ModulusStat(h=h, p=p, value=0.0, estimator=Estimator.BREAKPOINT)
    half = 0.5 * h
    points = np.unique(np.concatenate((b - half, b + half)))
    mids = 0.5 * (points[:-1] + points[1:])
    d = density_at(source, mids + half) - density_at(source, mids - half)
    terms = np.abs(d) ** p if absolute else d ** p
    value = math.fsum((np.diff(points) * terms).tolist())
    return ModulusStat(h=h, p=p, value=value, estimator=Estimator.BREAKPOINT)


def self_lp(source: FieldSource, p: int) -> float:
    """Integral of (L_t^x)^p dx; point masses are left out of the exact form."""
    _check_p(p)
    if isinstance(source, LocalTimeField):
        return math.fsum((source.values ** p).tolist()) * source.grid.dx
    pieces = source.density ** p * np.diff(source.breakpoints)
    return math.fsum(pieces.tolist())


# -- Self-intersection derivative --

def _coarsening_factor(n: int, max_steps: int) -> int:
    for f in range(max(1, math.ceil(n / max_steps)), n + 1):
        if n % f == 0:
            return f
    return n


def gamma_eps(path: BrownianPath, eps: float, max_steps: int = GAMMA_MAX_STEPS) -> GammaEstimate:
    """Trapezoid value of the double integral of p'_eps(B_u - B_s) over 0 < s < u < t.

    Cost is quadratic in the step count, so paths longer than max_steps
    are subsampled first.

    Raises:
        UsageError: If eps is not positive.
    """
    if not eps > 0:
        raise UsageError(f"eps must be positive, got {eps!r}")
    factor = _coarsening_factor(path.n_steps, max_steps)
    if factor > 1:
        logger.debug("gamma_eps: subsampling %d steps by %d", path.n_steps, factor)
        path = subsample(path, factor)

    values = np.asarray(path.values)
    n = path.n_steps
    ds = path.grid.step
    inner = np.zeros(n + 1)
    block = max(1, (1 << 22) // (n + 1))
    for start in range(1, n + 1, block):
        rows = np.arange(start, min(start + block, n + 1))
        width = int(rows[-1]) + 1
        g = numerics.heat_kernel_dx(values[rows, None] - values[None, :width], eps)
        g = np.where(np.arange(width)[None, :] <= rows[:, None], g, 0.0)
        ends = g[:, 0] + g[np.arange(rows.size), rows]
        inner[rows] = ds * (g.sum(axis=1) - 0.5 * ends)

    value = ds * (inner.sum() - 0.5 * (inner[0] + inner[-1]))
    return GammaEstimate(
        value=float(value), method=GammaMethod.EPS_REGULARIZED, step=ds, eps=eps,
    )


def gamma_rep(path: BrownianPath, stream: PrefixFieldStream) -> GammaEstimate:
    """2 * Ito sum of (integral of p_{t-r}(B_r - B_s) ds - L_r^{B_r}) dB_r.

    The integrand is evaluated at r = 0 and at every emitted time before t;
    L_r^{B_r} is the bin average at the bin containing B_r.
    """
    values = np.asarray(path.values)
    ds = path.grid.step
    t = path.horizon
    emitted = stream.indices.tolist()
    knots = [0] + emitted

    terms = []
    for k in range(1, len(knots) - 1):
        i, j = knots[k], knots[k + 1]
        tau = t - i * ds
        f = numerics.heat_kernel(values[i] - values[: i + 1], tau)
        inner = ds * (f.sum() - 0.5 * (f[0] + f[-1]))
        local = stream.field(k - 1).value_at(float(values[i]))
        terms.append((inner - local) * (values[j] - values[i]))

    return GammaEstimate(
        value=2.0 * math.fsum(terms),
        method=GammaMethod.ITO_REPRESENTATION,
        step=ds,
    )


# -- Clark-Ocone integrand --

def _extended_edges(grid: SpatialGrid, k: int) -> np.ndarray:
    """Edges of the bins carrying L^{z+h} - L^z, k bins wider on the left."""
    return (grid.origin_index - k + np.arange(grid.m + k + 1, dtype=np.float64)) * grid.dx


def _window_mass(edges: np.ndarray, upper: float, lower: float, sigma) -> np.ndarray:
    """Per-bin integral of N((upper - x)/sigma) - N((lower - x)/sigma) dx.

    sigma may be an array of shape (q, 1), giving a (q, bins) result.
    """
    psi = numerics.normal_partial_expectation
    left, right = edges[:-1], edges[1:]
    hi = psi((upper - left) / sigma) - psi((upper - right) / sigma)
    lo = psi((lower - left) / sigma) - psi((lower - right) / sigma)
    return np.maximum(sigma * (hi - lo), 0.0)


def window_time(values: np.ndarray, step: float, lo: float, hi: float) -> float:
    """Exact time the linear path through `values` spends in [lo, hi]."""
    u, v = values[:-1], values[1:]
    a = np.minimum(u, v)
    b = np.maximum(u, v)
    span = b - a
    steep = span > 1e-12
    out = np.zeros(u.size)
    overlap = np.clip(np.minimum(b, hi) - np.maximum(a, lo), 0.0, None)
    out[steep] = step * overlap[steep] / span[steep]
    mid = 0.5 * (a[~steep] + b[~steep])
    out[~steep] = np.where((mid >= lo) & (mid <= hi), step, 0.0)
    return math.fsum(out.tolist())


def phi_terms(
    path: BrownianPath,
    stream: PrefixFieldStream,
    position: int,
    h: float,
    guard: float = DEFAULT_GUARD,
) -> PhiSample:
    """The four Clark-Ocone integrand terms at the stream's `position`-th time r.

    phi1 and phi2 integrate (L_r^{z+h} - L_r^z)^2 against the window
    [B_r - h, B_r] and its heat-smoothed version. phi3 is written in w with
    v = w^2 = h^2/z, its y-integral in closed form and its s-integral
    through the occupation formula, then integrated by 32-point
    Gauss-Legendre in w on [0, sqrt(t - r)]. phi4 uses the closed form of K.

    Raises:
        EndpointError: If r > t (1 - guard).
        UsageError: If h is not on the bin lattice.
    """
    t = path.horizon
    ds = path.grid.step
    i = int(stream.indices[position])
    r = i * ds
    if r > t * (1.0 - guard):
        raise EndpointError(f"r={r!r} lies inside the guard window before t={t!r}")

    grid = stream.grid
    k = lattice_steps(h, grid.dx)
    field = stream.values[position]
    values = np.asarray(path.values)
    b_r = float(values[i])
    remaining = t - r

    d2 = shifted_differences(field, k) ** 2
    ext = _extended_edges(grid, k)
    overlap = np.clip(np.minimum(ext[1:], b_r) - np.maximum(ext[:-1], b_r - h), 0.0, None)
    phi1 = 6.0 * math.fsum((d2 * overlap).tolist())

    smoothed = _window_mass(ext, b_r, b_r - h, math.sqrt(remaining))
    phi2 = -6.0 * math.fsum((d2 * smoothed).tolist())

    w, weights = numerics.gauss_legendre(PHI3_NODES, 0.0, math.sqrt(remaining))
    tau = np.maximum(remaining - w * w, np.finfo(float).tiny)
    window = _window_mass(grid.edges(), b_r + h, b_r - h, np.sqrt(tau)[:, None])
    s_integral = window @ field
    kernel = 2.0 * -np.expm1(-(h * h) / (2.0 * w * w))
    phi3 = _PHI_SCALE * math.fsum((weights * kernel * s_integral).tolist())

    occupation = window_time(values[: i + 1], ds, b_r - h, b_r + h)
    phi4 = -_PHI_SCALE * h * occupation * numerics.tail_k(h * h / remaining)

    return PhiSample(r=r, h=h, t=t, phi1=phi1, phi2=phi2, phi3=phi3, phi4=phi4)


def clark_ocone_sum(
    path: BrownianPath,
    stream: PrefixFieldStream,
    h: float,
    guard: float = DEFAULT_GUARD,
    min_evaluations: int = MIN_PHI_EVALUATIONS,
) -> ClarkOconeResult:
    """Left-endpoint Ito sum of the Clark-Ocone integrand over emitted times.

    Times after t (1 - guard) are skipped; the excluded sliver is reported
    with the bound max|Phi| * |B_t - B_{r_end}|.

    Raises:
        UsageError: If fewer than min_evaluations integrand values fall
            before the guard window.
    """
    t = path.horizon
    ds = path.grid.step
    values = np.asarray(path.values)
    indices = stream.indices.tolist()
    limit = t * (1.0 - guard)
    positions = [
        k for k in range(len(indices) - 1) if indices[k] * ds <= limit
    ]
    if len(positions) < min_evaluations:
        raise UsageError(
            f"only {len(positions)} integrand evaluations before the guard window; "
            f"need {min_evaluations}"
        )

    sums: list[list[float]] = [[], [], [], []]
    largest = 0.0
    for k in positions:
        phi = phi_terms(path, stream, k, h, guard)
        increment = float(values[indices[k + 1]] - values[indices[k]])
        for term, value in zip(sums, (phi.phi1, phi.phi2, phi.phi3, phi.phi4)):
            term.append(value * increment)
        largest = max(largest, abs(phi.total))

    end = indices[positions[-1] + 1]
    terms = [math.fsum(s) for s in sums]
    return ClarkOconeResult(
        total=math.fsum(terms),
        terms=terms,
        n_evaluations=len(positions),
        guard_time=limit,
        sliver_time=t - end * ds,
        sliver_bound=largest * abs(float(values[-1] - values[end])),
    )


def cancellation_gap(result: ClarkOconeResult, gamma: float, h: float) -> float:
    """h^{-2} times the phi3 + phi4 Ito sums, minus 12 gamma.

    The last two integrand terms carry the self-intersection derivative;
    this gap shrinks with h and with refinement.
    """
    return (result.terms[2] + result.terms[3]) / (h * h) - 12.0 * gamma


# -- Reversed Tanaka --

def _grid_index(path: BrownianPath, r: float) -> int:
    ds = path.grid.step
    t = path.horizon
    i = int(round(r / ds))
    if not 0 < r <= t * (1.0 + 1e-12) or abs(i * ds - r) > 1e-9 * t or i < 1:
        raise UsageError(f"r={r!r} is not a grid time in (0, {t!r}]")
    return i


def _pos(v: float) -> float:
    return max(v, 0.0)


def _tanaka_residual(values: np.ndarray, field: LocalTimeField, i: int, x: float, h: float) -> float:
    b_r = float(values[i])
    lhs = 0.5 * (field.interpolate(b_r - x + h) - field.interpolate(b_r - x))

    later = values[1: i + 1]
    gap = b_r - later - x
    fires = (gap >= -h) & (gap <= 0.0)
    backward = math.fsum(np.diff(values[: i + 1])[fires].tolist())

    rhs = -_pos(-x + h) + _pos(-x) + _pos(b_r - x + h) - _pos(b_r - x) - backward
    return abs(lhs - rhs)


def reversed_tanaka_residual(
    path: BrownianPath,
    grid: SpatialGrid,
    x: float,
    h: float,
    r: float,
) -> float:
    """Residual of Tanaka's formula for the path reversed from time r.

    Compares (L_r^{B_r-x+h} - L_r^{B_r-x})/2, read from the binned field by
    linear interpolation between bin centers, with the positive-part terms
    minus the backward sum of
    1{B_r - B_{s_{k+1}} - x in [-h, 0]} (B_{s_{k+1}} - B_{s_k}).

    Raises:
        UsageError: If r is not a grid time in (0, t].
    """
    i = _grid_index(path, r)
    return _tanaka_residual(np.asarray(path.values), field_at_step(path, grid, i), i, x, h)


def mean_tanaka_residual(
    path: BrownianPath,
    grid: SpatialGrid,
    offsets: Sequence[float],
    h: float,
    times: Sequence[float],
) -> float:
    """reversed_tanaka_residual averaged over every (x, r) in offsets x times.

    The field at each r is built once and shared by all offsets.

    Raises:
        UsageError: If offsets or times is empty, or a time is off the grid.
    """
    if not offsets or not times:
        raise UsageError("mean_tanaka_residual needs at least one offset and one time")
    values = np.asarray(path.values)
    residuals = []
    for r in times:
        i = _grid_index(path, r)
        field = field_at_step(path, grid, i)
        residuals.extend(_tanaka_residual(values, field, i, x, h) for x in offsets)
    return math.fsum(residuals) / len(residuals)
