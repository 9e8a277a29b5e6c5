"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, BudgetError -> 3,
InvariantError -> 4.
"""


class QelabError(Exception):
    """Base class for all package errors."""


class ConfigError(QelabError):
    """Invalid input: bad parameter, schema violation, unsupported request."""


class BudgetError(QelabError):
    """A compute or memory guard tripped (work cap, dimension cap, retry cap)."""


class GenerationError(BudgetError):
    """Graph sampling exhausted its rejection budget."""

    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class InvariantError(QelabError):
    """A numerical invariant that should hold by construction was violated."""
