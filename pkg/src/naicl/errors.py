"""Shared exception hierarchy.

Module-specific errors subclass NaiclError so the CLI can map any
internal failure to a nonzero exit code without enumerating them.
"""


class NaiclError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(NaiclError):
    """Bad invocation or configuration supplied by the caller (exit code 2)."""
