"""Exception hierarchy shared by every bevcv module."""


class BevCvError(Exception):
    """Base class for all bevcv errors."""


class ValidationError(BevCvError, ValueError):
    """A value failed validation.  ``field`` names the offending field."""

    def __init__(self, field, message=None):
        self.field = field
        super().__init__(message or f"invalid value for {field!r}")


class ShapeMismatch(ValidationError):
    def __init__(self, message):
        super().__init__("shape", message)


class DimensionMismatch(ValidationError):
    def __init__(self, message):
        super().__init__("dim", message)


class DuplicateId(ValidationError):
    def __init__(self, ident, message=None):
        self.ident = ident
        super().__init__("id", message or f"duplicate id {ident}")


class DegenerateBatch(ValidationError):
    def __init__(self, message):
        super().__init__("batch", message)


class InvalidPartition(ValidationError):
    def __init__(self, message):
        super().__init__("cells_z", message)


class MissingTruth(ValidationError):
    def __init__(self, message):
        super().__init__("truth", message)


class ParseError(ValidationError):
    """Malformed text input.  ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__("input", message)


class MalformedFile(BevCvError, OSError):
    """A binary file has a bad magic, version or length."""


class DuplicateTensorName(ValidationError):
    def __init__(self, name):
        self.name = name
        super().__init__("name", f"duplicate tensor name {name!r}")


class MalformedImage(MalformedFile):
    pass


class UnsupportedFormat(BevCvError, OSError):
    pass
