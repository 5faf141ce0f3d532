"""
Error hierarchy shared by the engine, the training pipeline, the management
commands and the REST views.

Every error carries the process exit code used by the commands and the HTTP
status code used by the API, so callers translate them without a lookup table.
"""
from typing import List, Optional


class CEPError(Exception):
    """Base class for every error raised by the cep app"""
    exit_code = 1
    status_code = 400

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class UsageError(CEPError):
    """Bad command arguments or request parameters"""


class ConfigError(CEPError):
    """Malformed or inconsistent configuration"""


class RuleSyntaxError(CEPError):
    """Rule text that does not match the grammar"""

    def __init__(self, message: str, line: int, column: int, expected: Optional[List[str]] = None):
        self.line = line
        self.column = column
        self.expected = sorted(expected or [])
        hint = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"Syntax error at line {line}, column {column}: {message}{hint}")


class ProgramValidationError(CEPError):
    """A parsed program violates a structural invariant"""

    def __init__(self, diagnostics: List[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("Invalid program: " + "; ".join(self.diagnostics))


class EvaluationError(CEPError):
    """A built-in could not be evaluated (unbound arithmetic, non-ground neural input)"""


class ResourceError(CEPError):
    """A search or enumeration bound was exceeded"""


class BindingError(CEPError):
    """A circuit leaf has no belief for its timestamp"""

    def __init__(self, timestamp):
        self.timestamp = timestamp
        super().__init__(f"No belief bound for timestamp {timestamp}")


class ShapeError(CEPError):
    """Array shapes disagree with the network layout"""


class NumericError(CEPError):
    """Non-finite values in gradients or loss"""
    exit_code = 2
    status_code = 500

    def __init__(self, message: str, diagnostics_path: Optional[str] = None):
        self.diagnostics_path = diagnostics_path
        if diagnostics_path:
            message = f"{message} (diagnostics: {diagnostics_path})"
        super().__init__(message)


class BalanceError(CEPError):
    """A label class has too few occurrences to build a balanced set"""

    def __init__(self, label: str, available: int, required: int):
        self.label = label
        self.available = available
        self.required = required
        super().__init__(
            f"Label class '{label}' occurs {available} times but {required} are required; "
            "increase the stream size (e.g. --train-events) and regenerate"
        )


class SchemaError(CEPError):
    """Files or checkpoints that do not match the expected layout"""


class DatasetIOError(CEPError):
    """Reading or writing dataset, checkpoint or result files failed"""
    exit_code = 3
    status_code = 500
