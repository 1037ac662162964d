"""Exception types shared across the package.

Every error carries a short machine-parsable ``category`` used by the
CLI (single-line error output) and the HTTP service (error payloads).
"""

from __future__ import annotations


class LeakGraphError(Exception):
    """Base class for all errors raised by this package."""

    category = "internal"


class StructuralError(LeakGraphError, ValueError):
    """A graph or fault structure violates a structural invariant."""

    category = "structural"


class InputError(LeakGraphError, ValueError):
    """A user-supplied file, request, or value is malformed."""

    category = "input"


class InfeasibleEnumerationError(LeakGraphError, ValueError):
    """Enumeration constraints are unsatisfiable or exceed the size cap."""

    category = "infeasible"


class NoEstimationPossibleError(LeakGraphError):
    """The topology degenerated to a single node; nothing can be estimated."""

    category = "no-estimation"


class StaleCacheError(LeakGraphError):
    """A cached catalog does not match the topology it is used with."""

    category = "stale-cache"


class SolverError(LeakGraphError, RuntimeError):
    """An iterative solver failed to meet its convergence contract."""

    category = "solver"

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ContractViolation(LeakGraphError, RuntimeError):
    """An operation was invoked outside its documented precondition."""

    category = "contract"


class EmptyWindowError(LeakGraphError, ValueError):
    """No samples were available for the requested aggregation window."""

    category = "empty-window"
