"""Exception types shared across the package."""


class QgnnError(Exception):
    """Base class for all errors raised by qgnntrack."""


class SizeError(QgnnError, ValueError):
    pass


class QubitIndexError(QgnnError, IndexError):
    pass


class ArityError(QgnnError, ValueError):
    pass


class RangeError(QgnnError, ValueError):
    pass


class ConstructionError(QgnnError, ValueError):
    pass


class SchemaError(QgnnError, ValueError):
    pass


class JoinError(QgnnError, ValueError):
    pass


class GeometryError(QgnnError, ValueError):
    pass


class SingularityError(QgnnError, ValueError):
    pass


class ParseError(QgnnError, ValueError):
    """Malformed file; carries the 1-based line number when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class DegenerateClassError(QgnnError, ValueError):
    pass


class AlignmentError(QgnnError, ValueError):
    pass


class UnsupportedModeError(QgnnError, ValueError):
    pass


class CompatibilityError(QgnnError, ValueError):
    pass
