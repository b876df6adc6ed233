"""Occupation densities of sampled paths under the piecewise-linear model.

The sampled path is read as the linear interpolation of its grid values.
A segment from B_i to B_{i+1} spreads its duration uniformly over
[min, max] with density step / |B_{i+1} - B_i|; summing segments gives
the exact occupation density of the interpolated path. Two
representations are provided:

- binned_field: exact time per spatial bin, divided by the bin width
- breakpoint_density: the exact piecewise-constant density itself
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from loctime.errors import RangeError, UsageError
from loctime.models import (
    BreakpointDensity,
    BrownianPath,
    LocalTimeField,
    PrefixFieldStream,
    SpatialGrid,
)

logger = logging.getLogger(__name__)

# Increments below this are treated as point masses
ZERO_INCREMENT_FLOOR = 1e-300

# Exact accumulation scale: every finite double is an integer multiple of 2**-1074
_SCALE_BITS = 1074
_SCALE = 1 << _SCALE_BITS


# -- Grids --

def covering_grid(
    lo: float,
    hi: float,
    dx: float,
    h_max: float = 0.0,
    symmetric: bool = False,
) -> SpatialGrid:
    """Smallest lattice grid covering [lo, hi] plus a margin of max(h_max, 4 dx).

    Args:
        lo: Lowest value to cover.
        hi: Highest value to cover.
        dx: Bin width.
        h_max: Largest bandwidth the grid will be used with.
        symmetric: Make the grid symmetric about zero.

    Raises:
        UsageError: If dx is not positive or lo > hi.
    """
    if not (math.isfinite(dx) and dx > 0):
        raise UsageError(f"bin width must be positive, got {dx!r}")
    if lo > hi:
        raise UsageError(f"empty range [{lo}, {hi}]")
    margin = max(h_max, 4.0 * dx)
    i_lo = math.floor((lo - margin) / dx)
    i_hi = math.ceil((hi + margin) / dx)
    if symmetric:
        k = max(-i_lo, i_hi, 1)
        i_lo, i_hi = -k, k
    return SpatialGrid(origin_index=i_lo, dx=dx, m=i_hi - i_lo)


def path_grid(path: BrownianPath, dx: float, h_max: float = 0.0, symmetric: bool = True) -> SpatialGrid:
    """Covering grid for one path's range."""
    return covering_grid(float(path.values.min()), float(path.values.max()), dx, h_max, symmetric)


def lattice_steps(h: float, dx: float) -> int:
    """Number of bins spanned by h.

    Raises:
        UsageError: If h is not a positive integer multiple of dx.
    """
    k = int(round(h / dx))
    if k < 1 or abs(k * dx - h) > 1e-9 * h:
        raise UsageError(f"h={h} is not a multiple of the bin width {dx}")
    return k


# -- Binned field --

@dataclass(frozen=True)
class _Contributions:
    """Per-bin time contributions of every segment, in segment order."""
    bins: np.ndarray
    amounts: np.ndarray
    ends: np.ndarray  # ends[i]: one past the last contribution of segment i


def _check_covered(values: np.ndarray, grid: SpatialGrid) -> None:
    lo, hi = float(values.min()), float(values.max())
    if lo < grid.x_min:
        raise RangeError(f"path minimum {lo!r} lies below grid x_min {grid.x_min!r}")
    if hi > grid.x_max:
        raise RangeError(f"path maximum {hi!r} lies above grid x_max {grid.x_max!r}")


def _segment_contributions(values: np.ndarray, step: float, grid: SpatialGrid) -> _Contributions:
    _check_covered(values, grid)
    edges = grid.edges()
    dx = grid.dx
    lo = np.minimum(values[:-1], values[1:])
    hi = np.maximum(values[:-1], values[1:])

    j_lo = np.searchsorted(edges, lo, side="right") - 1
    j_hi = np.searchsorted(edges, hi, side="left") - 1
    j_lo = np.minimum(j_lo, grid.m - 1)
    multi = j_hi > j_lo

    counts = np.where(multi, j_hi - j_lo + 1, 1)
    ends = np.cumsum(counts)
    starts = ends - counts
    total = int(ends[-1]) if ends.size else 0

    seg = np.repeat(np.arange(counts.size), counts)
    bins = j_lo[seg] + (np.arange(total) - starts[seg])

    c = np.zeros(counts.size)
    c[multi] = step / (hi[multi] - lo[multi])
    amounts = c[seg] * dx
    first = starts[multi]
    last = ends[multi] - 1
    amounts[first] = c[multi] * (edges[j_lo[multi] + 1] - lo[multi])
    amounts[last] = c[multi] * (hi[multi] - edges[j_hi[multi]])
    amounts[starts[~multi]] = step
    return _Contributions(bins=bins, amounts=amounts, ends=ends)


def binned_field(path: BrownianPath, grid: SpatialGrid) -> LocalTimeField:
    """Exact time spent in each bin, divided by the bin width.

    Raises:
        RangeError: If the path leaves the grid.
    """
    return field_at_step(path, grid, path.n_steps)


def field_at_step(path: BrownianPath, grid: SpatialGrid, index: int) -> LocalTimeField:
    """Binned field of the path observed up to grid step `index`."""
    if not 1 <= index <= path.n_steps:
        raise UsageError(f"step index {index} outside 1..{path.n_steps}")
    values = np.asarray(path.values)[: index + 1]
    contrib = _segment_contributions(values, path.grid.step, grid)
    occupation = np.zeros(grid.m)
    np.add.at(occupation, contrib.bins, contrib.amounts)
    return LocalTimeField(grid=grid, values=occupation / grid.dx, time=index * path.grid.step)


def default_stride(n_steps: int, target: int = 256) -> int:
    """Smallest divisor of n_steps emitting at most `target` fields."""
    lower = max(1, math.ceil(n_steps / target))
    for d in range(lower, n_steps + 1):
        if n_steps % d == 0:
            return d
    return n_steps


def prefix_fields(path: BrownianPath, grid: SpatialGrid, stride: int) -> PrefixFieldStream:
    """Fields L_r at every stride-th grid time, built incrementally.

    Contributions are accumulated in segment order, so the field emitted
    at step k is bit-identical to binned_field of the path truncated at k.

    Raises:
        UsageError: If stride does not divide n_steps.
        RangeError: If the path leaves the grid.
    """
    n = path.n_steps
    if stride < 1 or n % stride:
        raise UsageError(f"stride {stride} does not divide n_steps={n}")
    contrib = _segment_contributions(np.asarray(path.values), path.grid.step, grid)

    indices = np.arange(stride, n + 1, stride)
    snapshots = np.empty((indices.size, grid.m))
    occupation = np.zeros(grid.m)
    start = 0
    for k, idx in enumerate(indices):
        stop = int(contrib.ends[idx - 1])
        np.add.at(occupation, contrib.bins[start:stop], contrib.amounts[start:stop])
        snapshots[k] = occupation / grid.dx
        start = stop

    return PrefixFieldStream(
        grid=grid,
        stride=stride,
        step=path.grid.step,
        indices=indices,
        values=snapshots,
    )


# -- Breakpoint density --

def _scaled(x: float) -> int:
    num, den = float(x).as_integer_ratio()
    return num << (_SCALE_BITS - (den.bit_length() - 1))


def breakpoint_density(path: BrownianPath) -> BreakpointDensity:
    """Exact occupation density of the piecewise-linear path.

    Densities are accumulated in exact integer arithmetic and rounded once,
    so the result does not depend on summation order and is exactly
    mirrored for the negated path. Segments with |increment| below
    ZERO_INCREMENT_FLOOR become point masses and are counted.
    """
    values = np.asarray(path.values)
    step = path.grid.step
    lo = np.minimum(values[:-1], values[1:])
    hi = np.maximum(values[:-1], values[1:])
    flat = (hi - lo) < ZERO_INCREMENT_FLOOR

    if flat.any():
        logger.warning(
            "path %d: %d zero increments treated as point masses",
            path.path_index, int(flat.sum()),
        )
    atom_positions = lo[flat]
    atom_masses = np.full(atom_positions.size, step)

    lo, hi = lo[~flat], hi[~flat]
    if lo.size == 0:
        return BreakpointDensity(
            breakpoints=np.empty(0),
            density=np.empty(0),
            horizon=path.horizon,
            atom_positions=atom_positions,
            atom_masses=atom_masses,
        )

    weights = [_scaled(w) for w in (step / (hi - lo)).tolist()]
    points = np.unique(np.concatenate((lo, hi)))
    net = [0] * points.size
    for a, b, w in zip(
        np.searchsorted(points, lo).tolist(),
        np.searchsorted(points, hi).tolist(),
        weights,
    ):
        net[a] += w
        net[b] -= w

    density = np.empty(points.size - 1)
    running = 0
    for j in range(points.size - 1):
        running += net[j]
        density[j] = running / _SCALE

    return BreakpointDensity(
        breakpoints=points,
        density=density,
        horizon=path.horizon,
        atom_positions=atom_positions,
        atom_masses=atom_masses,
    )


def density_total(density: BreakpointDensity) -> float:
    """Integral of the density plus the point masses."""
    pieces = density.density * np.diff(density.breakpoints)
    return math.fsum(pieces.tolist()) + math.fsum(density.atom_masses.tolist())


def density_at(density: BreakpointDensity, x: np.ndarray | float) -> np.ndarray:
    """Density value at x (zero outside the breakpoint range)."""
    x = np.asarray(x, dtype=np.float64)
    if density.breakpoints.size == 0:
        return np.zeros_like(x)
    j = np.searchsorted(density.breakpoints, x, side="right") - 1
    inside = (j >= 0) & (j < density.density.size)
    out = np.zeros_like(x)
    out[inside] = density.density[j[inside]]
    return out


def bin_average(density: BreakpointDensity, grid: SpatialGrid) -> np.ndarray:
    """Average of the density over each bin of `grid`, point masses included."""
    out = np.zeros(grid.m)
    edges = grid.edges()
    if density.breakpoints.size:
        cumulative = np.concatenate(
            ([0.0], np.cumsum(density.density * np.diff(density.breakpoints)))
        )
        at_edges = np.interp(edges, density.breakpoints, cumulative)
        out += np.diff(at_edges)
    if density.n_atoms:
        j = np.searchsorted(edges, density.atom_positions, side="right") - 1
        np.add.at(out, np.clip(j, 0, grid.m - 1), density.atom_masses)
    return out / grid.dx


# -- Occupation identity --

def _hat_antiderivative(x: np.ndarray, a: float, w: float) -> np.ndarray:
    d = np.asarray(x, dtype=np.float64) - a
    return np.where(
        d <= -w,
        0.0,
        np.where(
            d <= 0.0,
            0.5 * (w + d) ** 2,
            np.where(d < w, w * w - 0.5 * (w - d) ** 2, w * w),
        ),
    )


def hat_time_integral(
    path: BrownianPath,
    a: float,
    w: float,
    start: int = 0,
    stop: int | None = None,
) -> float:
    """Exact integral of (w - |B_s - a|)_+ over steps [start, stop) of the linear path."""
    values = np.asarray(path.values)
    stop = path.n_steps if stop is None else stop
    u = values[start:stop]
    v = values[start + 1: stop + 1]
    step = path.grid.step
    du = v - u
    steep = np.abs(du) > 1e-12
    total = np.zeros(u.size)
    total[steep] = step * (
        _hat_antiderivative(v[steep], a, w) - _hat_antiderivative(u[steep], a, w)
    ) / du[steep]
    mid = 0.5 * (u[~steep] + v[~steep])
    total[~steep] = step * np.maximum(w - np.abs(mid - a), 0.0)
    return math.fsum(total.tolist())


def occupation_identity_residual(
    path: BrownianPath,
    field: LocalTimeField,
    a: float,
    w: float,
) -> float:
    """|integral of f(B_s) ds - integral of f(x) L_t^x dx| for the hat f = (w - |x - a|)_+.

    Raises:
        UsageError: If w is not positive.
        RangeError: If the support [a - w, a + w] leaves the grid.
    """
    if not w > 0:
        raise UsageError(f"hat half-width must be positive, got {w!r}")
    grid = field.grid
    if a - w < grid.x_min or a + w > grid.x_max:
        raise RangeError(
            f"test-function support [{a - w!r}, {a + w!r}] leaves the grid "
            f"[{grid.x_min!r}, {grid.x_max!r}]"
        )
    lhs = hat_time_integral(path, a, w)
    weights = np.diff(_hat_antiderivative(grid.edges(), a, w))
    rhs = math.fsum((field.values * weights).tolist())
    return abs(lhs - rhs)


# -- Sup functionals --

def shifted_differences(values: np.ndarray, k: int) -> np.ndarray:
    """L^{x+h} - L^x on the bin lattice, zero-padded by k bins on both sides.

    Works on the last axis, so a stack of fields gives a stack of differences.
    """
    pad = [(0, 0)] * (values.ndim - 1) + [(k, k)]
    padded = np.pad(values, pad)
    return padded[..., k:] - padded[..., :-k]


def modulus_sup(stream: PrefixFieldStream, h: float) -> float:
    """sup over emitted r and grid x of |L_r^{x+h} - L_r^x|.

    Raises:
        UsageError: If h is not on the bin lattice.
    """
    k = lattice_steps(h, stream.grid.dx)
    if len(stream) == 0:
        return 0.0
    return float(np.abs(shifted_differences(stream.values, k)).max())


def increment_sup(later: LocalTimeField, earlier: LocalTimeField) -> float:
    """sup over x of L_t^x - L_s^x for two fields on the same grid."""
    if later.grid != earlier.grid:
        raise UsageError("fields must share a grid")
    if later.time < earlier.time:
        raise UsageError("later field must not precede the earlier one")
    return float((later.values - earlier.values).max())
