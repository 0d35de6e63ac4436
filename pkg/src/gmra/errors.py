"""Exception hierarchy shared by every module of the package."""


class GmraError(Exception):
    """Base class for all package errors."""


class EmptyCell(GmraError):
    pass


class EmptyInput(GmraError):
    pass


class AsymmetricInput(GmraError):
    pass


class DimensionExceedsCell(GmraError):
    def __init__(self, node, d, n_cell):
        self.node = node
        super().__init__(f"node {node}: dimension {d} exceeds cell size {n_cell}")


class NodeNotFound(GmraError, KeyError):
    def __str__(self):
        return f"node not found: {self.args[0]}"


class NotApplicable(GmraError):
    pass


class DimMismatch(GmraError, ValueError):
    pass


class ModelMismatch(GmraError):
    pass


class CostModelViolation(GmraError, ValueError):
    pass


class SpecError(GmraError, ValueError):
    pass


class ParseError(GmraError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(GmraError, ValueError):
    pass
