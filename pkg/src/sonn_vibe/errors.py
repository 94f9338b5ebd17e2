"""Exception types shared across ingestion, model I/O, and the CLI."""


class FormatError(Exception):
    """An input file violates the expected structure (ragged rows, bad magic, ...)."""


class ParseError(FormatError):
    """A token in an input file could not be parsed; the message names the row."""
