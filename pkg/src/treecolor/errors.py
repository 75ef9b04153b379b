"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: configuration problems -> 2,
capacity guards -> 3, infeasible boundary data -> 4.
"""


class TreecolorError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(TreecolorError, ValueError):
    """A parameter or data structure violates a documented invariant."""


class CapacityError(TreecolorError, RuntimeError):
    """An exact computation was requested beyond its enumeration guard."""


class InfeasibleBoundaryError(TreecolorError, ValueError):
    """A leaf coloring (or added constraint) admits no proper extension."""


class InfeasibleChannelError(TreecolorError, ValueError):
    """A conditional color distribution is degenerate (some color has mass 1)."""


class RegimeError(TreecolorError, ValueError):
    """Parameters fall outside the regime where a derived quantity is defined."""


class NonErgodicChainError(TreecolorError, RuntimeError):
    """The requested chain is not irreducible, so no mixing time exists."""
