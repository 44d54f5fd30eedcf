"""Exception hierarchy.

Input problems (bad parameters, malformed files, inconsistent grids) derive
from :class:`InputError`; failures of a numerical procedure on otherwise
valid input derive from :class:`NumericalError`.  The CLI maps the two
families onto exit codes 2 and 3.
"""

from __future__ import annotations


class ScmError(Exception):
    """Base class for every error raised by scmkit."""


class InputError(ScmError, ValueError):
    pass


class NumericalError(ScmError, ArithmeticError):
    pass


class ValidationError(InputError):
    """One or more invariants of a domain value are violated.

    ``violations`` holds ``(field, rule)`` pairs, one per failed check.
    """

    def __init__(self, type_name: str, violations: list[tuple[str, str]]):
        self.type_name = type_name
        self.violations = list(violations)
        lines = "; ".join(f"{f}: {r}" for f, r in self.violations)
        super().__init__(f"invalid {type_name}: {lines}")


class NonMonotonicGrid(InputError):
    pass


class GridOutsideBaseline(InputError):
    pass


class GridMismatch(InputError):
    pass


class NoOverlap(InputError):
    pass


class WindowTooShort(InputError):
    pass


class ZeroRate(InputError):
    pass


class ToleranceNotMet(NumericalError):
    pass


class DivergentIntegral(NumericalError):
    pass


class DegenerateJacobian(NumericalError):
    pass


class ZeroResponse(NumericalError):
    pass


class SingularRateMatrix(NumericalError):
    pass
