"""Exception types shared across modules (the CLI maps them to exit codes)."""


class EctError(Exception):
    pass


class ValidationError(EctError, ValueError):
    """Input violates a structural or geometric invariant."""


class RadiusError(ValidationError):
    """A point lies outside the declared bounding radius."""


class TieError(EctError, ValueError):
    """Threshold coincides with a sample height."""


class IncompatibleError(EctError, ValueError):
    """Two objects that must share directions / radius / structure do not."""


class GpFitError(EctError, RuntimeError):
    pass


class DegenerateCurveError(EctError, ValueError):
    """Curve speed vanishes (within tolerance) somewhere."""


class DerivativeError(EctError, ValueError):
    """Kernel does not provide the requested partial derivative."""
