"""Exception hierarchy shared by all modules."""


class StreamingAMError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(StreamingAMError, ValueError):
    """Operand dimensions are inconsistent."""


class ContractError(StreamingAMError, ValueError):
    """A documented precondition does not hold (e.g. a fully masked query row)."""


class NonFiniteError(StreamingAMError, ValueError):
    """External input contained NaN or Inf."""


class MissingTensorError(StreamingAMError, KeyError):
    """A required named tensor is absent from a weight set."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing tensor"


class ConfigError(StreamingAMError, ValueError):
    """An encoder configuration is invalid or incompatible with its weights."""


class StreamClosedError(StreamingAMError, RuntimeError):
    """Input was delivered to a stream that has already been flushed."""


class FormatError(StreamingAMError, ValueError):
    """An on-disk file violates its format.

    ``offset`` is the byte offset at which the violation was detected, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
