"""Exception types shared across the package."""


class SpectralLossError(Exception):
    """Base class for all package errors."""


class ParameterError(SpectralLossError, ValueError):
    """An argument is outside its admissible range."""


class ShapeError(SpectralLossError, ValueError):
    """Two inputs that must agree in grid or truncation do not."""


class FieldFormatError(SpectralLossError, ValueError):
    """A field or coefficient file could not be decoded."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class UndefinedScoreError(SpectralLossError, ArithmeticError):
    """A score is undefined for the given input, e.g. a zero denominator."""


class TrainingDivergedError(SpectralLossError, RuntimeError):
    """Gradient descent left the bounded region."""
