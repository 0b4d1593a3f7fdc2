"""Shared exception types and small argument checks."""

import numpy as np


class ContractError(ValueError):
    """An input violates an operation's preconditions."""


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or gradient.

    ``trace`` carries whatever diagnostics were gathered before the failure.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else {}


def as_rng(random_state):
    """Coerce ``None``/int/Generator into a ``numpy.random.Generator``."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    return np.random.default_rng(random_state)
