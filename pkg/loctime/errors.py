"""Exception hierarchy for the loctime laboratory.

The CLI maps these onto exit codes: usage problems exit 2, failed
scientific checks and anything unexpected exit 1.
"""

from __future__ import annotations


class LoctimeError(Exception):
    """Base class for all loctime errors."""


class UsageError(LoctimeError, ValueError):
    """Invalid parameters: bad grids, off-lattice bandwidths, too few samples."""


class RangeError(UsageError):
    """A path or test-function support falls outside the spatial grid."""


class EndpointError(UsageError):
    """Clark-Ocone integrand requested inside the guard window before t."""


class DataError(LoctimeError, ValueError):
    """Input data that cannot be processed (NaN samples, non-positive V)."""
