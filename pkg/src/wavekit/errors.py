"""Exception types shared across the package."""


class WavekitError(Exception):
    """Base class for all wavekit errors."""


class InputError(WavekitError):
    """Malformed or inconsistent user input (bad dimensions, schema, modes)."""


class NumericalError(WavekitError):
    """A solver failed to converge or produced an invalid state.

    Carries an optional ``history`` payload (residuals, ratios, ...) so
    callers can inspect what went wrong.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []
