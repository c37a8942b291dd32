"""Exception hierarchy.

Errors are grouped by the CLI exit code they map to: configuration
problems exit with 1, numerical failures with 2.  Diagnostic failures are
not exceptions; they are reported through ``DiagnosticReport.passed``.
"""


class MovnsError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(MovnsError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ConfigError):
    pass


class NumericalError(MovnsError):
    pass


class NonInvertibleJacobian(NumericalError):
    pass


class NonConstantJacobian(NumericalError):
    """det M varies in space, so the map is outside the admissible class."""


class OutOfDomain(NumericalError):
    pass


class FrameMismatch(MovnsError):
    pass


class DegenerateBasis(NumericalError):
    pass


class NonFiniteError(NumericalError):
    def __init__(self, message, node=None):
        self.node = node
        if node is not None:
            message = f"{message} (time node {node})"
        super().__init__(message)


class BlowUpError(NonFiniteError):
    pass
