"""Exception hierarchy shared across the package."""


class OutfitRecError(Exception):
    """Base class for all package errors."""


class ValidationError(OutfitRecError, ValueError):
    """Raised when a record or value violates a type invariant.

    ``line`` and ``field`` locate the problem when it comes from a file.
    """

    def __init__(self, message, *, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.message = message


class DuplicateIdError(ValidationError):
    def __init__(self, item_id, *, line=None):
        self.item_id = item_id
        super().__init__(f"duplicate id {item_id!r}", line=line, field="item_id")


class FormatVersionError(ValidationError):
    """File header names an unknown format or version."""


class DimensionMismatchError(ValidationError):
    pass


class DomainMismatchError(OutfitRecError, ValueError):
    """Two matrices or tables cannot be combined."""


class FeatureFileError(OutfitRecError, ValueError):
    pass


class MagicMismatchError(FeatureFileError):
    pass


class TruncatedFileError(FeatureFileError):
    pass


class ZeroNormVectorError(FeatureFileError):
    pass


class MissingArtifactError(OutfitRecError):
    """A prebuilt artifact (palette, matrix, table, ...) is not available."""

    def __init__(self, artifact, hint=None):
        self.artifact = artifact
        msg = f"missing artifact: {artifact}"
        if hint:
            msg += f" ({hint})"
        super().__init__(msg)


class QueryError(OutfitRecError, ValueError):
    """A query is malformed or its strategy and payload are incompatible."""

    def __init__(self, message, field=None):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}" if field else message)


class UndefinedHueError(OutfitRecError, ValueError):
    """The query colour is achromatic, so colour-wheel rules do not apply."""
