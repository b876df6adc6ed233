"""Pydantic models for loctime data structures.

Defines schemas for grids, sampled paths, local-time fields, per-path
records, statistical summaries and the experiment configuration.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _frozen_array(values: np.ndarray, ndim: int = 1) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-D array, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


# -- Enums --

class Estimator(str, Enum):
    """Representation a functional was evaluated on."""
    BINNED = "binned"
    BREAKPOINT = "breakpoint"


class GammaMethod(str, Enum):
    """How a self-intersection derivative estimate was formed."""
    EPS_REGULARIZED = "eps_regularized"
    ITO_REPRESENTATION = "ito_representation"


class RecordStatus(str, Enum):
    """Per-path outcome in an ensemble run."""
    OK = "ok"
    EXCLUDED = "excluded"


# -- Grids and paths --

class SeedSpec(BaseModel):
    """Master seed; per-path streams are keyed by (master_seed, path_index)."""
    model_config = ConfigDict(frozen=True)

    master_seed: int = Field(ge=0, lt=2**64, description="64-bit master seed")


class TimeGrid(BaseModel):
    """Uniform time grid on [0, t], stored as step and step count."""
    model_config = ConfigDict(frozen=True)

    step: float = Field(gt=0.0)
    n_steps: int = Field(ge=2)

    @property
    def horizon(self) -> float:
        return self.step * self.n_steps

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1, dtype=np.float64) * self.step


class BrownianPath(BaseModel):
    """A sampled trajectory B_0..B_n on a uniform grid, with provenance."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: TimeGrid
    values: np.ndarray
    seed: int = 0
    path_index: int = Field(default=0, ge=0)
    antithetic: bool = False
    refine_level: int = Field(default=0, ge=0)

    @field_validator("values", mode="before")
    @classmethod
    def _check_values(cls, v):
        return _frozen_array(v)

    @model_validator(mode="after")
    def _check_shape(self) -> "BrownianPath":
        if self.values.shape[0] != self.grid.n_steps + 1:
            raise ValueError(
                f"path has {self.values.shape[0]} values for {self.grid.n_steps} steps"
            )
        if self.values[0] != 0.0:
            raise ValueError("path must start at 0")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("path values must be finite")
        return self

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    @property
    def horizon(self) -> float:
        return self.grid.horizon

    def increments(self) -> np.ndarray:
        return np.diff(self.values)


# -- Local-time representations --

class SpatialGrid(BaseModel):
    """Bin lattice {(origin_index + j) * dx : j = 0..m}.

    Edges are integer multiples of dx, so a grid with
    origin_index = -m/2 is exactly symmetric about zero.
    """
    model_config = ConfigDict(frozen=True)

    origin_index: int
    dx: float = Field(gt=0.0)
    m: int = Field(ge=1)

    @property
    def x_min(self) -> float:
        return self.origin_index * self.dx

    @property
    def x_max(self) -> float:
        return (self.origin_index + self.m) * self.dx

    @property
    def symmetric(self) -> bool:
        return 2 * self.origin_index + self.m == 0

    def edges(self) -> np.ndarray:
        return (self.origin_index + np.arange(self.m + 1, dtype=np.float64)) * self.dx

    def left_edges(self) -> np.ndarray:
        return self.edges()[:-1]

    def bin_of(self, x: float) -> int:
        """Index of the bin containing x (half-open [e_j, e_{j+1})), or -1 / m outside."""
        j = int(np.searchsorted(self.edges(), x, side="right")) - 1
        if x == self.x_max:
            j = self.m - 1
        return max(-1, min(j, self.m))


class LocalTimeField(BaseModel):
    """Bin averages of L_r^x on a spatial grid, taken at time r."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: SpatialGrid
    values: np.ndarray
    time: float = Field(ge=0.0)

    @field_validator("values", mode="before")
    @classmethod
    def _check_values(cls, v):
        return _frozen_array(v)

    @model_validator(mode="after")
    def _check_shape(self) -> "LocalTimeField":
        if self.values.shape[0] != self.grid.m:
            raise ValueError(f"field has {self.values.shape[0]} values for {self.grid.m} bins")
        return self

    def mass(self) -> float:
        return math.fsum(self.values.tolist()) * self.grid.dx

    def value_at(self, x: float) -> float:
        """Bin average at the bin containing x; zero off the grid."""
        j = self.grid.bin_of(x)
        if j < 0 or j >= self.grid.m:
            return 0.0
        return float(self.values[j])

    def interpolate(self, x: float) -> float:
        """Linear interpolation between bin centers, falling to zero at the grid ends."""
        centers = self.grid.left_edges() + 0.5 * self.grid.dx
        xp = np.concatenate(([self.grid.x_min], centers, [self.grid.x_max]))
        fp = np.concatenate(([0.0], self.values, [0.0]))
        return float(np.interp(x, xp, fp, left=0.0, right=0.0))


class BreakpointDensity(BaseModel):
    """Exact piecewise-constant occupation density of the piecewise-linear path.

    density[j] holds on (breakpoints[j], breakpoints[j+1]). Segments with a
    vanishing increment carry their time as point masses in `atoms`.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    breakpoints: np.ndarray
    density: np.ndarray
    horizon: float
    atom_positions: np.ndarray
    atom_masses: np.ndarray

    @field_validator("breakpoints", "density", "atom_positions", "atom_masses", mode="before")
    @classmethod
    def _check_arrays(cls, v):
        return _frozen_array(v)

    @model_validator(mode="after")
    def _check_shape(self) -> "BreakpointDensity":
        if self.breakpoints.size and self.density.size != self.breakpoints.size - 1:
            raise ValueError("density needs one value per breakpoint interval")
        return self

    @property
    def n_atoms(self) -> int:
        return int(self.atom_positions.size)


class PrefixFieldStream(BaseModel):
    """Fields L_r^x at r = k * stride * step, k = 1..n_steps/stride."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: SpatialGrid
    stride: int = Field(ge=1)
    step: float = Field(gt=0.0)
    indices: np.ndarray
    values: np.ndarray

    @field_validator("indices", mode="before")
    @classmethod
    def _check_indices(cls, v):
        arr = np.array(v, dtype=np.int64).reshape(-1)
        arr.flags.writeable = False
        return arr

    @field_validator("values", mode="before")
    @classmethod
    def _check_values(cls, v):
        return _frozen_array(v, ndim=2)

    def __len__(self) -> int:
        return int(self.indices.size)

    @property
    def times(self) -> np.ndarray:
        return self.indices * self.step

    def field(self, k: int) -> LocalTimeField:
        return LocalTimeField(
            grid=self.grid,
            values=self.values[k],
            time=float(self.indices[k] * self.step),
        )

    def position_of(self, step_index: int) -> int:
        """Position in the stream of the field emitted at a grid step index."""
        k = int(np.searchsorted(self.indices, step_index))
        if k >= self.indices.size or self.indices[k] != step_index:
            raise KeyError(f"no field emitted at step {step_index}")
        return k


# -- Functionals --

class ModulusStat(BaseModel):
    """Value of the integral of (L^{x+h} - L^x)^p."""
    h: float
    p: int
    value: float
    estimator: Estimator


class GammaEstimate(BaseModel):
    """An estimate of the self-intersection local-time derivative at zero."""
    value: float
    method: GammaMethod
    step: float
    eps: Optional[float] = None


class PhiSample(BaseModel):
    """The four Clark-Ocone integrand terms at time r."""
    r: float
    h: float
    t: float
    phi1: float = Field(ge=0.0)
    phi2: float = Field(le=0.0)
    phi3: float = Field(ge=0.0)
    phi4: float = Field(le=0.0)

    @property
    def total(self) -> float:
        return self.phi1 + self.phi2 + self.phi3 + self.phi4


class ClarkOconeResult(BaseModel):
    """Left-endpoint Ito sum of the Clark-Ocone integrand, split by term."""
    total: float
    terms: list[float] = Field(min_length=4, max_length=4)
    n_evaluations: int
    guard_time: float
    sliver_time: float
    sliver_bound: float


# -- Statistics --

class MomentSummary(BaseModel):
    """Sample moments with standard errors."""
    n: int = Field(ge=2)
    mean: float
    variance: float = Field(ge=0.0)
    skewness: float
    kurtosis: float = Field(description="Raw standardized fourth moment (3 for a Gaussian)")
    se_mean: float
    se_variance: float
    se_skewness: float
    se_kurtosis: float


class KsResult(BaseModel):
    """One-sample Kolmogorov-Smirnov test against N(0, 1)."""
    statistic: float = Field(ge=0.0, le=1.0)
    p_value: float = Field(ge=0.0, le=1.0)
    n: int


# -- Ensemble --

class ExperimentConfig(BaseModel):
    """Effective configuration for one laboratory run.

    Keys are flat and unknown keys are rejected.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    t: float = Field(default=1.0, gt=0.0)
    h_list: list[float] = Field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    n_paths: int = Field(default=1000, ge=1)
    n_steps: int = Field(default=4096, ge=2)
    master_seed: int = Field(default=20240601, ge=0, lt=2**64)
    bin_ratio: int = Field(default=20, ge=1)
    compute_gamma: bool = False
    compute_clark_ocone: bool = False
    compute_modulus_sup: bool = False
    antithetic_pairs: bool = False
    gamma_eps: list[float] = Field(default_factory=lambda: [0.1, 0.05, 0.02])
    guard: float = Field(default=1.0 / 64.0, gt=0.0, lt=1.0)
    emitted: int = Field(default=256, ge=1)
    rounds: int = Field(default=2, ge=1)
    increment_fractions: list[float] = Field(
        default_factory=lambda: [0.5, 0.25, 0.125, 0.0625]
    )
    min_records: int = Field(default=1000, ge=8)
    out_dir: str = "out"
    threads: Optional[int] = Field(default=None, ge=1)

    @field_validator("h_list")
    @classmethod
    def _check_h_list(cls, v: list[float]) -> list[float]:
        if not v:
            raise ValueError("h_list must not be empty")
        if any(not math.isfinite(h) or h <= 0.0 for h in v):
            raise ValueError("every h must be positive")
        if any(a <= b for a, b in zip(v, v[1:])):
            raise ValueError("h_list must be strictly decreasing")
        return v

    @field_validator("gamma_eps")
    @classmethod
    def _check_eps(cls, v: list[float]) -> list[float]:
        if any(e <= 0.0 for e in v):
            raise ValueError("every eps must be positive")
        return v

    @field_validator("increment_fractions")
    @classmethod
    def _check_fractions(cls, v: list[float]) -> list[float]:
        if any(not 0.0 < q < 1.0 for q in v):
            raise ValueError("increment fractions must lie in (0, 1)")
        return v

    @model_validator(mode="after")
    def _check_lattice(self) -> "ExperimentConfig":
        dx = self.dx
        for h in self.h_list:
            k = round(h / dx)
            if k < 1 or abs(k * dx - h) > 1e-9 * h:
                raise ValueError(f"h={h} is not a multiple of the bin width {dx}")
        return self

    @property
    def dx(self) -> float:
        return min(self.h_list) / self.bin_ratio

    @property
    def step(self) -> float:
        return self.t / self.n_steps

    @property
    def under_resolved(self) -> bool:
        """True when time steps are too coarse for the bin width (dx^2 < step)."""
        return self.step > self.dx ** 2

    def audit_dict(self) -> dict:
        """Config fields that determine results (execution-only keys dropped)."""
        return self.model_dump(exclude={"out_dir", "threads"})


class PathRecord(BaseModel):
    """Per-path functional values, keyed by bandwidth where applicable."""
    path_index: int = Field(ge=0)
    v2: float = float("nan")
    v3: float = float("nan")
    f2: dict[float, float] = Field(default_factory=dict)
    f3: dict[float, float] = Field(default_factory=dict)
    modulus_sup: dict[float, float] = Field(default_factory=dict)
    gamma_rep: Optional[float] = None
    gamma_eps: dict[float, float] = Field(default_factory=dict)
    clark_ocone: Optional[float] = None
    status: RecordStatus = RecordStatus.OK
    reason: Optional[str] = None

    @property
    def excluded(self) -> bool:
        return self.status == RecordStatus.EXCLUDED


class ReportEntry(BaseModel):
    """Distributional summary of the normalized statistic at one bandwidth."""
    h: float
    p: int
    n: int
    n_excluded: int
    ks_d: float
    ks_p: float
    mean: float
    var: float
    skew: float
    kurt: float
    se_mean: float
    se_var: float
    se_skew: float
    se_kurt: float
    second_moment_ratio: float
    second_moment_ratio_se: float
    second_moment_target: float
    centering_mean: float
    centering_se: float
    centering_target: float
    modulus_sup_mean: Optional[float] = None
    checks: dict[str, bool] = Field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(self.checks.values())


class TrendSummary(BaseModel):
    """Diagnostics across the bandwidth list."""
    ks_d: list[float]
    ks_d_non_increasing: bool
    second_moment_ratio: list[float]
    ratio_toward_target: bool
    modulus_sup_slope: Optional[float] = None
    modulus_sup_slope_ok: Optional[bool] = None


class Report(BaseModel):
    """Full sweep report, echoing the effective configuration."""
    p: int
    config: dict
    n_records: int
    n_excluded: int
    under_resolved: bool
    entries: dict[str, ReportEntry]
    trends: TrendSummary
    self_lp_mean: float
    self_lp_se: float
    self_lp_oracle: float
    checks: dict[str, bool] = Field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values()) and all(e.passed for e in self.gated_entries())

    def gated_entries(self) -> list[ReportEntry]:
        """Entries the acceptance thresholds apply to (the smallest bandwidth)."""
        h_min = min(e.h for e in self.entries.values())
        return [e for e in self.entries.values() if e.h == h_min]


class CheckResult(BaseModel):
    """One line of the identity table."""
    name: str
    value: float
    target: float
    deviation: float
    tolerance: float
    passed: bool


# -- Studies --

class RefinementTrend(BaseModel):
    """Per-level medians of a per-path residual, and per-round paired ratios.

    round_ratios[k] is the median over paths of fine / coarse residual for
    round k + 1; the trend is decreasing when every ratio is below one.
    """
    quantity: str
    medians: list[float]
    round_ratios: list[float] = Field(default_factory=list)
    decreasing: bool


class StudyReport(BaseModel):
    """Outcome of a representation, scaling or gamma study."""
    study: str
    config: dict
    n_paths: int
    n_excluded: int
    values: dict[str, Optional[float]] = Field(default_factory=dict)
    series: dict[str, list[float]] = Field(default_factory=dict)
    trends: list[RefinementTrend] = Field(default_factory=list)
    checks: dict[str, bool] = Field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(self.checks.values())
