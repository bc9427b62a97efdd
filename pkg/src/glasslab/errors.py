"""Exception hierarchy shared across the package.

Two failure families matter to callers (and to the CLI exit-code mapping):
``DomainError`` for inputs outside an operation's contract, and
``NumericalError`` for computations that started from valid inputs but could
not be completed to tolerance.
"""

from __future__ import annotations


class GlasslabError(Exception):
    """Base class for all package errors."""


class DomainError(GlasslabError, ValueError):
    """Input violates a documented precondition (CLI exit code 1)."""


class SizeCapError(DomainError):
    """A dense realization or superoperator exceeds its size cap."""


class NumericalError(GlasslabError, RuntimeError):
    """A numeric routine failed to converge or left tolerance (exit code 2)."""
