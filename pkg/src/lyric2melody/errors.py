"""Shared exception base for the package.

Every error raised by this package subclasses :class:`LyricMelodyError` so
callers (notably the CLI) can map error families to exit codes without
catching bare ``Exception``.
"""


class LyricMelodyError(Exception):
    """Base class for all errors raised by lyric2melody."""
