"""Shared exception types.

Plain ``ValueError`` is used for ordinary bad-argument cases; the classes
here exist where callers need to catch a specific failure mode or read
structured fields off the exception.
"""

from __future__ import annotations


class FormatError(ValueError):
    """A file did not match its declared on-disk format.

    ``field`` names the offending part of the format (e.g. "magic",
    "count", "row 3").
    """

    def __init__(self, message: str, field: str):
        super().__init__(f"{message} (field: {field})")
        self.field = field


class BudgetExhaustedError(RuntimeError):
    """A query would push the oracle ledger past its cap."""

    def __init__(self, ledger: int, cap: int):
        super().__init__(f"query budget exhausted: ledger={ledger} cap={cap}")
        self.ledger = ledger
        self.cap = cap


class CapabilityError(RuntimeError):
    """A channel (e.g. white-box probabilities) is not available here."""


class TransportError(RuntimeError):
    """A remote call failed after exhausting its retry budget."""

    def __init__(self, message: str, attempts: int, last_status: int | None = None):
        super().__init__(message)
        self.attempts = attempts
        self.last_status = last_status


class ConfigError(ValueError):
    """An experiment config document failed validation.

    ``path`` is the dotted location of the bad field, e.g. "attack.gamma1".
    """

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
