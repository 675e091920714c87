from typing import Optional


class HybridSkinError(Exception):
    pass


class DataError(HybridSkinError, ValueError):
    """Invalid input data: malformed files, bad indices, size mismatches, degenerate geometry."""

    def __init__(self, message: str, *, face: Optional[int] = None, vertex: Optional[int] = None):
        super().__init__(message)
        self.face = face
        self.vertex = vertex


class ObjParseError(DataError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NumericalError(HybridSkinError, ArithmeticError):
    """The computation is ill-defined for the given values (antipodal blends, divergence)."""


class UsageError(HybridSkinError):
    """Bad command line or configuration values."""
