"""Shared exception types."""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for every error raised by this package."""


class ParseError(PipelineError):
    """A structured input file failed to parse.

    Carries the offending file and (1-based) line number so batch inputs can
    be fixed without guesswork.
    """

    def __init__(self, file: str, line: int, message: str):
        super().__init__(f"{file}:{line}: {message}")
        self.file = file
        self.line = line
        self.message = message


class ConfigError(PipelineError):
    """Run configuration is invalid (unknown key, bad value, missing field)."""
