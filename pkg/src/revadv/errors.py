"""Exception hierarchy shared by every module.

CLI exit codes are attached to the classes so the front end can map
failures without a lookup table.
"""


class RevAdvError(Exception):
    exit_code = 1


class DimensionError(RevAdvError, ValueError):
    exit_code = 4


class DomainError(RevAdvError, ValueError):
    exit_code = 4


class FormatError(RevAdvError, ValueError):
    """Malformed file or stream. ``offset`` is the byte (or bit) position, when known."""

    exit_code = 4

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class CodecError(FormatError):
    """Arithmetic-coded stream could not be decoded."""


class TrainingError(RevAdvError, RuntimeError):
    exit_code = 1


class ZeroGradientError(RevAdvError, ArithmeticError):
    exit_code = 3


class DegenerateGradientError(ZeroGradientError):
    pass


class AttackFailedError(RevAdvError):
    exit_code = 3

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class CapacityError(RevAdvError):
    """Payload does not fit. Carries required and available bit counts."""

    exit_code = 2

    def __init__(self, required, available, message=None):
        if message is None:
            message = f"payload needs {required} bits but only {available} are available"
        super().__init__(message)
        self.required = required
        self.available = available


class NotMarkedError(FormatError):
    """Image does not carry a payload produced by this toolkit (or was altered)."""


class CorruptedPayloadError(FormatError):
    pass
