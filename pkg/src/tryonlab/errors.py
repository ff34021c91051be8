"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class ShapeError(ValidationError):
    """Tensor shape does not match the declared contract."""


class FormatError(ValidationError):
    """External file has the wrong structure or unmapped content."""


class TweakError(ValidationError):
    """A garment tweak cannot be applied (e.g. required joints invisible)."""


class TrainingError(RuntimeError):
    """Training aborted, e.g. a loss term became non-finite."""


class OracleSizeError(ValidationError):
    """Oracle refused an input too large for its deliberately slow path."""
