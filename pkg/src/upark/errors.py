"""Exception types shared across the package."""


class UparkError(Exception):
    """Base class for all package errors."""


class ScenarioError(UparkError):
    """Malformed or invalid scenario document."""


class ClockSkewError(UparkError):
    """Sample fed to the localization pipeline out of timestamp order."""


class InsufficientAnchorsError(UparkError):
    """Fewer than three anchors with accepted ranges."""


class CollinearAnchorsError(UparkError):
    """Anchor geometry too degenerate to fix a 2D position."""


class NoFreeSlotError(UparkError):
    """Every parking slot is occupied."""


class UnreachableGoalError(UparkError):
    """Grid search target cannot be reached from the start cell."""


class SmoothingInfeasibleError(UparkError):
    """Corridor too narrow for a collision-free smoothed path."""


class ManeuverInfeasibleError(UparkError):
    """No tangent arc of at least the minimum radius reaches the slot axis."""


class ProtocolError(UparkError):
    """Malformed, oversized, or unknown wire message."""
