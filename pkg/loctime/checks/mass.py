"""Total occupation time of binned fields and breakpoint densities."""

from __future__ import annotations

import numpy as np

from loctime.checks.base import IdentityCheck
from loctime.local_time import binned_field, breakpoint_density, density_total, path_grid
from loctime.models import BrownianPath, CheckResult, TimeGrid

_N_STEPS = 1000


def wave_path(n_steps: int = _N_STEPS, horizon: float = 1.0) -> BrownianPath:
    """A deterministic oscillating path with many level crossings."""
    s = np.linspace(0.0, horizon, n_steps + 1)
    values = 0.7 * np.sin(6.0 * np.pi * s) + 0.3 * s - 0.2 * np.sin(17.0 * s) ** 3
    return BrownianPath(grid=TimeGrid(step=horizon / n_steps, n_steps=n_steps), values=values, seed=0, path_index=0)


class MassCheck(IdentityCheck):
    """Sum of L dx equals t for the binned field and the breakpoint density."""

    check_id = "mass"
    check_name = "Mass conservation"

    def run(self, settings: dict) -> list[CheckResult]:
        tol = settings["mass_tol"]
        results = []
        for horizon in settings.get("horizons", (1.0, 2.5)):
            horizon = float(horizon)
            path = wave_path(horizon=horizon)
            field = binned_field(path, path_grid(path, 0.01, h_max=0.1))
            results.append(self._result(f"binned mass, t={horizon:g}", field.mass(), horizon, tol * horizon))
            density = breakpoint_density(path)
            results.append(self._result(
                f"breakpoint mass, t={horizon:g}", density_total(density), horizon, tol * horizon,
            ))
        return results
