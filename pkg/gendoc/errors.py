"""Error hierarchy shared by every gendoc module"""

from __future__ import annotations

from typing import Iterable, Optional


class GenDocError(Exception):
    """Base class for all gendoc errors"""


class ConfigError(GenDocError, ValueError):
    """Invalid run configuration or settings"""


class InputValidationError(GenDocError, ValueError):
    """A document, box or token sequence violates an input precondition"""


class VocabError(GenDocError, ValueError):
    """Vocabulary lookup failed; `block` names the block the offending id belongs to"""

    def __init__(self, message: str, block: Optional[str] = None):
        super().__init__(message)
        self.block = block


class DecodeError(GenDocError, ValueError):
    """A generated or stored token sequence cannot be parsed"""

    def __init__(self, message: str, block: Optional[str] = None):
        super().__init__(message)
        self.block = block


class NumericError(GenDocError, ArithmeticError):
    """Non-finite value met during a forward pass, loss or gradient check"""

    def __init__(
        self,
        message: str,
        where: Optional[str] = None,
        active_tasks: Optional[Iterable[str]] = None,
    ):
        self.where = where
        self.active_tasks = tuple(sorted(active_tasks)) if active_tasks else ()
        if self.active_tasks:
            message = f"{message} (active tasks: {', '.join(self.active_tasks)})"
        super().__init__(message)


class CheckpointError(GenDocError):
    """Checkpoint file is missing, truncated or from an unknown format version"""


class DataError(GenDocError, ValueError):
    """Corpus or OCR file on disk is malformed"""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column
