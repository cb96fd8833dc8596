"""Exception types shared across the package.

`OcclubenchError` marks data/file problems (bad inputs, malformed files,
failed batch jobs); plain `ValueError` is reserved for caller contract
violations (bad arguments). The CLI maps the former to exit code 2.
"""

from __future__ import annotations


class OcclubenchError(Exception):
    """Base class for data-level failures."""


class DecodeError(OcclubenchError):
    """Malformed or unsupported image stream; carries the failing byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ManifestError(OcclubenchError):
    """Bad manifest or split file; carries the failing line when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line


class CheckpointError(OcclubenchError):
    """Unreadable, corrupt, or mismatched model checkpoint."""


class BatchError(OcclubenchError):
    """Every file in a batch operation failed; carries per-file reasons."""

    def __init__(self, message: str, failures: list[tuple[str, str]]):
        detail = "; ".join(f"{p}: {why}" for p, why in failures[:5])
        if len(failures) > 5:
            detail += f"; ... {len(failures) - 5} more"
        super().__init__(f"{message}: {detail}")
        self.failures = failures
