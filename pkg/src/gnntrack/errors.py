class ConfigError(ValueError):
    """Inconsistent configuration or mismatched dimensions."""


class FormatError(ValueError):
    """A malformed input file; the message carries file and line."""

    def __init__(self, path, line, msg):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line
