"""Shared error base.

Every module defines its own exception types; they all derive from
DeckgenError so the CLI can map any failure to a machine-readable
``{"error": kind, "message": ...}`` record and a stable exit code.
"""

from __future__ import annotations


class DeckgenError(Exception):
    """Base for all package errors. ``kind`` feeds the CLI error JSON."""

    exit_code = 1

    @property
    def kind(self) -> str:
        return type(self).__name__


class ConfigInvalid(DeckgenError):
    """Bad configuration value (out-of-range threshold, missing key, ...)."""

    exit_code = 2
