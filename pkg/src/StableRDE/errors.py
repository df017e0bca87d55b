# Copyright (C) 2025 The StableRDE Authors
# SPDX-License-Identifier: LGPL-3.0-only

"""Exception hierarchy.

User errors derive from ValueError so callers that only know the standard
library still catch them; the CLI reports them as warnings and exits 1.
"""


class StableRDEError(Exception):
    """Base class for all errors raised by StableRDE."""


class DomainError(StableRDEError, ValueError):
    """A precondition on a parameter or a tree was violated."""


class SizeError(DomainError):
    """An input exceeds the size an exact routine is allowed to handle."""


class NoRootError(DomainError):
    """Calibration found no root of f(beta) - 1 on (0, 1)."""


class SampleSizeError(DomainError):
    """Too few samples for the requested statistical test."""


class ConfigError(StableRDEError, ValueError):
    """A run configuration failed validation.

    ``keys`` lists every offending key, in the order they were found.
    """

    def __init__(self, message: str, keys=()):
        self.keys = tuple(keys)
        if self.keys:
            message = f"{message}: {', '.join(self.keys)}"
        super().__init__(message)
