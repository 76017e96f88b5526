"""Exception hierarchy shared by the nlgame modules.

Every exception derives from ``NlgameError`` plus the builtin it
specializes, so callers that only expect ``ValueError``/``RuntimeError``
keep working. The CLI maps each class to an exit code.
"""

from typing import Any


class NlgameError(Exception):
    """Base class for all nlgame errors."""

    exit_code = 1


class InvalidAxisError(NlgameError, ValueError):
    """Unknown, duplicated or colliding axis label."""

    exit_code = 2


class GameValidationError(NlgameError, ValueError):
    """A game failed validation; ``violations`` lists every offending cell."""

    exit_code = 2

    def __init__(self, violations: list[Any]):
        self.violations = list(violations)
        shown = "; ".join(str(v) for v in self.violations[:5])
        more = len(self.violations) - 5
        if more > 0:
            shown += f"; ... ({more} more)"
        super().__init__(f"Invalid game: {shown}")


class GameFileError(NlgameError, ValueError):
    """A GameFile (or strategy/target file) could not be parsed."""

    exit_code = 2


class BudgetExceededError(NlgameError, ValueError):
    """A table, enumeration or linear program exceeds its size budget."""

    exit_code = 3

    def __init__(self, what: str, cells: int, budget: int, hint: str = ""):
        self.what = what
        self.cells = cells
        self.budget = budget
        message = f"{what} needs {cells} cells, budget is {budget}"
        if hint:
            message += f". {hint}"
        super().__init__(message)


class SolverError(NlgameError, RuntimeError):
    """The LP solver stalled or returned an unusable status."""

    exit_code = 4


class AuditFailure(NlgameError, RuntimeError):
    """
    An audit precondition or step failed; ``step`` names it. ``report``
    holds the serialized audit when the failure happened after it ran.
    """

    exit_code = 5

    def __init__(self, step: str, message: str, report: dict | None = None):
        self.step = step
        self.report = report
        super().__init__(f"Audit failed at step '{step}': {message}")
