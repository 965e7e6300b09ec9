"""Exception types shared across the package."""


class FsiError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FsiError, ValueError):
    """Invalid geometry, coefficient, preset or run configuration."""


class DimensionError(FsiError, ValueError):
    """Fields or states living on different grids."""


class CompatibilityError(FsiError, ValueError):
    """Neumann data violating the solvability condition."""

    def __init__(self, defect, message=None):
        self.defect = defect
        super().__init__(message or f"incompatible Neumann data: defect {defect:.3e}")


class AssemblyError(FsiError, RuntimeError):
    """A discrete operator failed one of its structural checks."""


class StepError(FsiError, RuntimeError):
    """A time step could not be completed to tolerance."""


class CapacityError(FsiError, RuntimeError):
    """A dense computation was requested above the configured size cap."""


class LedgerError(FsiError, RuntimeError):
    """The multiplier ledger could not be formed for the given trajectory."""


class DegenerateFitError(FsiError, ValueError):
    """An energy trace has too few positive samples to fit a decay rate."""
