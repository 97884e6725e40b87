"""Exception hierarchy shared by every stage of the pipeline."""


class CalibrationError(Exception):
    """Base class for all errors raised by lfcal."""


class ValidationError(CalibrationError, ValueError):
    """Input data violates a structural invariant."""


class ParseError(ValidationError):
    """A file could not be parsed; ``context`` names the offending location."""

    def __init__(self, message, context=None):
        self.context = context
        if context is not None:
            message = f"{context}: {message}"
        super().__init__(message)


class BehindCameraError(CalibrationError):
    """A point projects with non-positive depth."""

    def __init__(self, message="point is behind the camera", viewpoint=None, frame=None, point=None):
        self.viewpoint = viewpoint
        self.frame = frame
        self.point = point
        ctx = [f"{name}={val}" for name, val in
               (("viewpoint", viewpoint), ("frame", frame), ("point", point)) if val is not None]
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)


class NumericalError(CalibrationError):
    """An iterative or closed-form computation failed numerically."""


class EstimationError(NumericalError):
    """Homography or closed-form estimation failed (too few points, degenerate layout)."""


class RankDeficiencyError(EstimationError):
    """The linear system has a null space larger than one dimension."""


class OptimizationError(NumericalError):
    """Levenberg-Marquardt could not make progress; carries the last report."""

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class ConfigurationError(CalibrationError, ValueError):
    """A simulation or run configuration is unusable."""
