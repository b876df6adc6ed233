"""Square integral and symmetries of the g_h kernel."""

from __future__ import annotations

import numpy as np

from loctime import numerics
from loctime.checks.base import IdentityCheck
from loctime.models import CheckResult

_POINTS = np.array([-0.7, -0.3, -0.05, 0.0, 0.05, 0.3, 0.7])


class GKernelCheck(IdentityCheck):
    """Integral of g_h^2 over [-h, h]^2 equals h^4 / 2; g is swap and sign-flip symmetric."""

    check_id = "g_kernel"
    check_name = "g_h kernel"

    def run(self, settings: dict) -> list[CheckResult]:
        results = []
        for h in settings.get("bandwidths", (0.1, 1.0)):
            h = float(h)
            ratio = numerics.g_kernel_square_integral(h) / (h ** 4 / 2.0)
            results.append(self._result(f"g_{h:g}: quadrature / (h^4/2)", ratio, 1.0, settings["ratio_tol"]))

        x, y = np.meshgrid(_POINTS, _POINTS)
        g = numerics.g_kernel(x, y, 1.0)
        asymmetry = max(
            float(np.abs(g - numerics.g_kernel(y, x, 1.0)).max()),
            float(np.abs(g - numerics.g_kernel(-x, -y, 1.0)).max()),
        )
        results.append(self._result("g symmetry defect", asymmetry, 0.0, 0.0))
        return results
