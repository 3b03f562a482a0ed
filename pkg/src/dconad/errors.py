"""Exception hierarchy.

Every error carries a short ``category`` string so the CLI can print a
single machine-parseable line (``error: <category>: <message>``).
"""


class DConADError(Exception):
    category = "error"


class DimensionError(DConADError, ValueError):
    category = "dimension"


class AlignmentError(DimensionError):
    category = "alignment"


class NumericError(DConADError, ArithmeticError):
    category = "numeric"


class DomainError(DConADError, ValueError):
    category = "domain"


class ContractError(DConADError, ValueError):
    category = "contract"


class ConfigError(DConADError, ValueError):
    category = "config"


class CompatibilityError(DConADError, ValueError):
    category = "compatibility"


class DataError(DConADError, ValueError):
    category = "data"


class InputTooShortError(DataError):
    category = "input-too-short"


class WindowTooLargeError(DataError):
    category = "window-too-large"


class MissingFileError(DataError, FileNotFoundError):
    category = "missing-file"


class RaggedRowsError(DataError):
    category = "ragged-rows"


class NonNumericError(DataError):
    category = "non-numeric"


class LabelMismatchError(DataError):
    category = "label-mismatch"


class CheckpointError(DConADError, ValueError):
    category = "checkpoint"
