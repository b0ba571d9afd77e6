"""Exception hierarchy. CLI exit codes: usage errors 1, data/format errors 2,
numerical failures 3."""


class GeoManifoldError(Exception):
    """Base class for all package errors."""


class UsageError(GeoManifoldError):
    """Caller violated a precondition (bad argument, bad config, bad call order)."""

    exit_code = 1


class ShapeError(UsageError):
    """Operand dimensions incompatible with an operator."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")


class FormatError(GeoManifoldError):
    """A file failed to parse. Carries the byte offset of the failure."""

    exit_code = 2

    def __init__(self, message: str, offset: int = 0):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class DataError(GeoManifoldError):
    """Input data is structurally valid but unusable (missing labels, too few subjects...)."""

    exit_code = 2


class NumericalError(GeoManifoldError):
    """A numerical computation failed (divergence, NaN, degenerate input)."""

    exit_code = 3


class DegenerateInputError(NumericalError):
    """Input is in a singular configuration (e.g. zero vector has no direction)."""


class SingularityError(NumericalError):
    """Operation undefined at this point (e.g. log map between antipodal points)."""


class DivergenceError(NumericalError):
    """ODE integration exceeded its step budget."""

    def __init__(self, message: str, t_reached: float):
        self.t_reached = t_reached
        super().__init__(f"{message} (integration reached t={t_reached:.6g})")


class TrainingError(NumericalError):
    """Training step failed; names the offending parameter or step."""
