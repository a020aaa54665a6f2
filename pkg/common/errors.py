"""Exception hierarchy shared by the library and the pipelines."""

from __future__ import annotations

from typing import Iterable, Sequence, Tuple


class CalibrationError(RuntimeError):
    """Base class for every failure raised by this project."""


class ConfigError(CalibrationError):
    """Invalid configuration: unknown feature, bad preset, bad flag combination."""


class SchemaError(CalibrationError):
    """A CSV file does not declare the expected columns."""

    def __init__(self, message: str, missing: Sequence[str] = ()) -> None:
        super().__init__(message)
        self.missing = tuple(missing)


class RecordValidationError(CalibrationError):
    """One or more rows violate a value constraint."""

    def __init__(self, message: str, rows: Iterable[int] = ()) -> None:
        super().__init__(message)
        self.rows = tuple(sorted(set(int(r) for r in rows)))


class DuplicateKeyError(CalibrationError):
    """A key that must be unique occurs more than once."""

    def __init__(self, message: str, keys: Sequence[Tuple[object, ...]] = ()) -> None:
        super().__init__(message)
        self.keys = tuple(keys)


class InsufficientDataError(CalibrationError):
    """Not enough complete cases to fit or train."""


class DomainError(CalibrationError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NonFiniteParameterError(CalibrationError):
    """A link function produced a parameter outside the family's domain."""


class BuildError(CalibrationError):
    """Layer shapes do not chain."""

    def __init__(self, message: str, layer_index: int) -> None:
        super().__init__(f"layer {layer_index}: {message}")
        self.layer_index = layer_index


class TrainingError(CalibrationError):
    """Training cannot proceed (empty data, non-finite outputs)."""


class MissingArtifactError(CalibrationError):
    """A model artifact needed for prediction is not on disk."""


class AlignmentError(CalibrationError):
    """Two sequences that must be aligned differ in length or keys."""


__all__ = [
    "CalibrationError",
    "ConfigError",
    "SchemaError",
    "RecordValidationError",
    "DuplicateKeyError",
    "InsufficientDataError",
    "DomainError",
    "NonFiniteParameterError",
    "BuildError",
    "TrainingError",
    "MissingArtifactError",
    "AlignmentError",
]
