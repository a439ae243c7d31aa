"""Exception types shared across the package."""


class WellcastError(Exception):
    """Base class for all package errors."""


class ConfigurationError(WellcastError):
    """Invalid or inconsistent configuration (bad shapes, missing stats, flag mismatch)."""


class SimulationError(WellcastError):
    """The synthetic well oracle failed to converge to a steady state."""


class TrainingError(WellcastError):
    """Non-finite loss or gradients encountered during optimization."""
