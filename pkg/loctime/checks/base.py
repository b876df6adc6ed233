"""Abstract base class for loctime identity checks.

Every identity check inherits from IdentityCheck and implements run(),
which evaluates one closed-form identity (or a small family of them)
without any random input and returns one CheckResult per table line.
"""

from __future__ import annotations

import abc
import logging
import math

from loctime.models import CheckResult

logger = logging.getLogger(__name__)


class IdentityCheck(abc.ABC):
    """Base class for all identity checks.

    Subclasses set check_id and implement run().
    """

    # Override in subclasses
    check_id: str = ""
    check_name: str = ""

    @abc.abstractmethod
    def run(self, settings: dict) -> list[CheckResult]:
        """Evaluate the identity.

        Args:
            settings: This check's entry from identities.yml (tolerances).

        Returns:
            One CheckResult per printed line.
        """
        ...

    def _result(
        self,
        name: str,
        value: float,
        target: float,
        tolerance: float,
        relative: bool = False,
    ) -> CheckResult:
        """Compare value with target under an absolute or relative tolerance."""
        deviation = abs(value - target)
        if relative:
            deviation /= abs(target)
        passed = math.isfinite(deviation) and deviation <= tolerance
        if not passed:
            logger.warning("%s: %r vs %r (deviation %.3g > %.3g)", name, value, target, deviation, tolerance)
        return CheckResult(
            name=name,
            value=value,
            target=target,
            deviation=deviation,
            tolerance=tolerance,
            passed=passed,
        )

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} check_id={self.check_id!r}>"
