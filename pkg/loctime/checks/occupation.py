"""Occupation-time formula and estimator agreement on synthetic paths."""

from __future__ import annotations

import numpy as np

from loctime.checks.base import IdentityCheck
from loctime.local_time import (
    bin_average,
    binned_field,
    breakpoint_density,
    covering_grid,
    occupation_identity_residual,
)
from loctime.models import BrownianPath, CheckResult, TimeGrid


def unit_slope_path(n_steps: int = 64) -> BrownianPath:
    """B_s = s on [0, 1]."""
    return BrownianPath(
        grid=TimeGrid(step=1.0 / n_steps, n_steps=n_steps),
        values=np.arange(n_steps + 1) / n_steps,
        seed=0,
        path_index=0,
    )


def tent_path() -> BrownianPath:
    """0 -> 1 -> 0 in two steps of duration 1/2."""
    return BrownianPath(grid=TimeGrid(step=0.5, n_steps=2), values=[0.0, 1.0, 0.0], seed=0, path_index=0)


class OccupationCheck(IdentityCheck):
    """Hat test function integrated in time and against the binned field agree."""

    check_id = "occupation"
    check_name = "Occupation-time formula"

    def run(self, settings: dict) -> list[CheckResult]:
        tol = settings["residual_tol"]
        line = unit_slope_path()
        grid = covering_grid(-0.5, 1.5, 0.1)
        field = binned_field(line, grid)
        results = [
            self._result(
                "unit slope, hat at 0.5 width 0.25",
                occupation_identity_residual(line, field, 0.5, 0.25), 0.0, tol,
            ),
            self._result(
                "hat outside the path range",
                occupation_identity_residual(line, field, -0.3, 0.1), 0.0, tol,
            ),
        ]

        tent = tent_path()
        tent_grid = covering_grid(0.0, 1.0, 0.1)
        binned = binned_field(tent, tent_grid).values
        averaged = bin_average(breakpoint_density(tent), tent_grid)
        scale = max(float(np.abs(binned).max()), 1.0)
        results.append(self._result(
            "tent: breakpoint bin averages vs binned field",
            float(np.abs(averaged - binned).max()) / scale, 0.0, settings["agreement_tol"],
        ))
        return results
