class RallyError(Exception):
    """Base class for every error raised by the simulator and trainer."""


class ConfigurationError(RallyError, ValueError):
    pass


class AgentLookupError(RallyError, LookupError):
    pass


class ShapeError(RallyError, ValueError):
    pass


class NoTargetsError(RallyError):
    pass


class TransportError(RallyError):
    pass


class CorpusError(RallyError):
    pass


class TrainingError(RallyError, RuntimeError):
    """
    Raised when training cannot continue (non-finite gradients, divergence).

    :param message: str: Human readable summary
    :param diagnostics: dict: Values captured at the failing update
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

    def __str__(self):
        if not self.diagnostics:
            return super().__str__()
        details = ", ".join(f"{key}={value}" for key, value in sorted(self.diagnostics.items()))
        return f"{super().__str__()} ({details})"
