"""Shared exception types."""


class ParseError(ValueError):
    """A ratings file line that cannot be parsed. Carries path and 1-based line number."""

    def __init__(self, path, line_no: int, reason: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {reason}")


class EmptyDatasetError(ValueError):
    """No interactions survive ingestion or filtering."""


class CheckpointFormatError(ValueError):
    """A checkpoint or embedding file is truncated, mislabeled, or from a different layout."""


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""
