"""Reproducible Brownian paths on uniform time grids.

Every path is drawn from its own counter-based Philox stream keyed by
(master_seed, path_index), so path i is bit-identical however an
ensemble is scheduled. Gaussian draws use numpy's Generator.standard_normal
(ziggurat) on that stream.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from loctime.errors import UsageError
from loctime.models import BrownianPath, SeedSpec, TimeGrid

logger = logging.getLogger(__name__)

# Stream tag for bridge midpoints, distinct from the base increments
_REFINE_TAG = 0x62726467


def make_grid(t: float, n_steps: int) -> TimeGrid:
    """Build a uniform grid on [0, t] with n_steps steps.

    Raises:
        UsageError: If t is not a positive finite number or n_steps < 2.
    """
    if not (isinstance(t, (int, float)) and math.isfinite(t) and t > 0):
        raise UsageError(f"horizon t must be positive, got {t!r}")
    if int(n_steps) != n_steps or n_steps < 2:
        raise UsageError(f"n_steps must be an integer >= 2, got {n_steps!r}")
    return TimeGrid(step=float(t) / int(n_steps), n_steps=int(n_steps))


def _stream(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def sample_path(seed_spec: SeedSpec, path_index: int, grid: TimeGrid) -> BrownianPath:
    """Draw path `path_index` of the ensemble defined by `seed_spec`.

    Args:
        seed_spec: Master seed.
        path_index: Non-negative path index.
        grid: Time grid.

    Returns:
        A BrownianPath with B_0 = 0 and i.i.d. N(0, step) increments.
    """
    if path_index < 0:
        raise UsageError(f"path_index must be non-negative, got {path_index}")
    if grid.n_steps < 2 or grid.step <= 0:
        raise UsageError("invalid time grid")
    rng = _stream(seed_spec.master_seed, path_index)
    increments = rng.standard_normal(grid.n_steps) * math.sqrt(grid.step)
    values = np.empty(grid.n_steps + 1)
    values[0] = 0.0
    np.cumsum(increments, out=values[1:])
    return BrownianPath(
        grid=grid,
        values=values,
        seed=seed_spec.master_seed,
        path_index=path_index,
    )


def refine(path: BrownianPath, factor: int) -> BrownianPath:
    """Insert Brownian-bridge midpoints until the grid is `factor` times finer.

    Coarse-grid values are carried over unchanged; each new midpoint is
    N((B_l + B_r)/2, step_new/2) from a stream keyed by the path's provenance
    and the level being refined. Noise is negated on antithetic paths, so
    refine and antithetic commute.

    Raises:
        UsageError: If factor is not a power of two >= 2.
    """
    if int(factor) != factor or factor < 2 or (int(factor) & (int(factor) - 1)):
        raise UsageError(f"refinement factor must be a power of two >= 2, got {factor!r}")

    values = np.asarray(path.values)
    step = path.grid.step
    n = path.grid.n_steps
    sign = -1.0 if path.antithetic else 1.0
    level = path.refine_level

    for _ in range(int(factor).bit_length() - 1):
        rng = _stream(path.seed, path.path_index, _REFINE_TAG, n)
        step = step / 2.0
        noise = rng.standard_normal(n) * math.sqrt(step / 2.0)
        mid = 0.5 * (values[:-1] + values[1:]) + sign * noise
        finer = np.empty(2 * n + 1)
        finer[0::2] = values
        finer[1::2] = mid
        values = finer
        n *= 2
        level += 1

    return BrownianPath(
        grid=TimeGrid(step=step, n_steps=n),
        values=values,
        seed=path.seed,
        path_index=path.path_index,
        antithetic=path.antithetic,
        refine_level=level,
    )


def subsample(path: BrownianPath, factor: int) -> BrownianPath:
    """Keep every `factor`-th value; factor must divide n_steps."""
    if factor < 1 or path.n_steps % factor:
        raise UsageError(f"factor {factor} does not divide n_steps={path.n_steps}")
    if factor == 1:
        return path
    return BrownianPath(
        grid=TimeGrid(step=path.grid.step * factor, n_steps=path.n_steps // factor),
        values=path.values[::factor],
        seed=path.seed,
        path_index=path.path_index,
        antithetic=path.antithetic,
    )


def truncate(path: BrownianPath, n_steps: int) -> BrownianPath:
    """The same path observed up to step `n_steps` (same step size)."""
    if n_steps < 2 or n_steps > path.n_steps:
        raise UsageError(f"cannot truncate {path.n_steps} steps to {n_steps}")
    return BrownianPath(
        grid=TimeGrid(step=path.grid.step, n_steps=n_steps),
        values=path.values[: n_steps + 1],
        seed=path.seed,
        path_index=path.path_index,
        antithetic=path.antithetic,
        refine_level=path.refine_level,
    )


def antithetic(path: BrownianPath) -> BrownianPath:
    """Pointwise negation, flagged as the antithetic partner."""
    return BrownianPath(
        grid=path.grid,
        values=0.0 - path.values,
        seed=path.seed,
        path_index=path.path_index,
        antithetic=not path.antithetic,
        refine_level=path.refine_level,
    )


def ensemble_path(seed_spec: SeedSpec, path_index: int, grid: TimeGrid, paired: bool) -> BrownianPath:
    """Path `path_index` of an ensemble, optionally in antithetic pairs.

    With pairing, odd indices are the negation of the preceding even path.
    """
    if paired and path_index % 2 == 1:
        partner = sample_path(seed_spec, path_index - 1, grid)
        return antithetic(partner).model_copy(update={"path_index": path_index})
    return sample_path(seed_spec, path_index, grid)
