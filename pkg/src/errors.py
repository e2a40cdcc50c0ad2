class DimensionError(ValueError):
    """Raised when tensor or matrix extents do not line up."""

    def __init__(self, message: str, *shapes: tuple[int, ...]):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(shape)) for shape in shapes)
        super().__init__(message)
        self.shapes = shapes


class ConfigurationError(ValueError):
    """Raised when configuration values are inconsistent with each other or with a checkpoint."""


class FeatureFileError(ValueError):
    """Raised when a feature file cannot be decoded. `offset` is the byte offset of the failure."""

    def __init__(self, message: str, offset: int, path: str | None = None):
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (at byte offset {offset})")
        self.offset = offset
        self.path = path


class GrammarError(ValueError):
    """Raised when an activity grammar cannot produce a valid sequence."""

    def __init__(self, message: str, rule: str):
        super().__init__(f"{rule}: {message}")
        self.rule = rule
