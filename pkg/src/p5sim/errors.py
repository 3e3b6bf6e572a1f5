"""Exception types shared across the package."""


class P5Error(Exception):
    """Base class for all p5sim errors."""


class TopologyError(P5Error):
    """Invalid topology content (parse errors carry the offending line number)."""


class ForceFieldError(P5Error):
    """Invalid force-field parameters."""


class GeometryError(P5Error):
    """Degenerate geometry (zero-length bond, collinear angle, undefined axis)."""


class OverlapError(ForceFieldError):
    """Two beads closer than the hard-overlap threshold (0.05 sigma)."""


class IntegrationError(P5Error):
    """Non-finite values entering or leaving the integrator."""


class DegenerateTransitionError(P5Error):
    """Transition density requested for noiseless dynamics (kT=0 or gamma=0)."""


class CheckpointError(P5Error):
    """Malformed policy checkpoint file."""


class ConfigError(P5Error):
    """Invalid configuration key, value, or constraint violation."""


class UndefinedBaselineError(P5Error):
    """Relative improvement against a zero-occupancy baseline."""
