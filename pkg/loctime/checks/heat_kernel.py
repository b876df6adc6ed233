"""Heat kernel normalization, reference values and spatial derivative."""

from __future__ import annotations

import math

from loctime import numerics
from loctime.checks.base import IdentityCheck
from loctime.models import CheckResult

_FD_STEP = 1e-5
_FD_POINTS = ((0.5, 1.0), (-0.3, 0.25), (1.2, 2.0), (0.05, 0.1))


class HeatKernelCheck(IdentityCheck):
    """p_eps integrates to one; p'_eps matches a central finite difference."""

    check_id = "heat_kernel"
    check_name = "Heat kernel"

    def run(self, settings: dict) -> list[CheckResult]:
        eps = float(settings.get("eps", 0.25))
        mass, _ = numerics.adaptive_simpson(
            lambda x: float(numerics.heat_kernel(x, eps)), -10.0, 10.0, tol=1e-12,
        )
        results = [
            self._result(f"integral of p_{eps:g}", mass, 1.0, settings["mass_tol"]),
            self._result("p_1(0)", float(numerics.heat_kernel(0.0, 1.0)), 1.0 / math.sqrt(2.0 * math.pi), 1e-15),
        ]
        worst = 0.0
        for x, e in _FD_POINTS:
            fd = (
                float(numerics.heat_kernel(x + _FD_STEP, e)) - float(numerics.heat_kernel(x - _FD_STEP, e))
            ) / (2.0 * _FD_STEP)
            worst = max(worst, abs(fd - float(numerics.heat_kernel_dx(x, e))))
        results.append(self._result("p' vs central difference", worst, 0.0, settings["derivative_tol"]))
        return results
