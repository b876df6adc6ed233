"""Tail integral K(a): value at zero and closed form against quadrature."""

from __future__ import annotations

import math

from loctime import numerics
from loctime.checks.base import IdentityCheck
from loctime.models import CheckResult

DEFAULT_POINTS = (1e-6, 0.01, 0.1, 1.0, 10.0, 100.0)
DEFAULT_UPPER = 1e6


class TailIntegralCheck(IdentityCheck):
    """K(0) = sqrt(2 pi), and K(a) - K(upper) equals the quadrature over [a, upper]."""

    check_id = "tail_integral"
    check_name = "Tail integral K(a)"

    def run(self, settings: dict) -> list[CheckResult]:
        upper = float(settings.get("upper", DEFAULT_UPPER))
        results = [
            self._result("K(0)", numerics.tail_k(0.0), math.sqrt(2.0 * math.pi), settings["zero_tol"]),
        ]
        for a in settings.get("points", DEFAULT_POINTS):
            a = float(a)
            closed = numerics.tail_k(a) - numerics.tail_k(upper)
            quad = numerics.tail_k_quadrature(a, upper)
            results.append(self._result(f"K({a:g}) closed form vs quadrature", closed, quad, settings["quad_tol"]))
        return results
