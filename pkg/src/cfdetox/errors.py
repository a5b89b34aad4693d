"""Exception taxonomy shared by every module.

The CLI maps these onto exit codes: ValidationError (and subclasses) -> 1,
OSError -> 2, NumericsError -> 3.
"""


class CfDetoxError(Exception):
    """Base class for all package errors."""


class ValidationError(CfDetoxError):
    """Invalid user input: bad flag values, bad labels, empty datasets."""


class ParseError(ValidationError):
    """Malformed file content; carries a 1-based line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class ShapeError(ValidationError):
    """Array shape mismatch; message names both shapes."""


class VocabularyError(ValidationError):
    """Token id outside the vocabulary / embedding table."""


class ContractError(CfDetoxError):
    """A caller violated an operation's precondition."""


class DomainError(ContractError):
    """Math op evaluated outside its domain (e.g. log of a non-positive)."""


class NumericsError(CfDetoxError):
    """Non-finite values where finite ones are required (divergent loss)."""
