"""
Custom exceptions for plaincode.

This module defines a hierarchy of exceptions for the error conditions that
can occur while analyzing types, synthesizing plans, recording traces and
emitting plain-code serialized objects.
"""


class PlainCodeError(Exception):
    """Base exception for all plaincode errors."""

    def __init__(self, message: str = "An error occurred in plaincode") -> None:
        self.message = message
        super().__init__(self.message)


class ConfigurationError(PlainCodeError):
    """
    Raised when the configuration file or an environment override is invalid.
    """

    def __init__(self, message: str = "Invalid configuration") -> None:
        super().__init__(message)


class AnalysisError(PlainCodeError):
    """
    Raised when a type declaration cannot be resolved.

    Attributes:
        type_name: The type name that could not be resolved.
    """

    def __init__(
        self, message: str = "Type analysis failed", type_name: str | None = None
    ) -> None:
        self.type_name = type_name
        super().__init__(message)


class PlanInfeasibleError(PlainCodeError):
    """
    Raised when no action subset satisfies the plan constraints.

    Attributes:
        type_name: Target type of the plan problem.
        constraint: Either ``"constructing"`` (no constructing action is
            available) or ``"coverage"`` (a field cannot be set by any action).
        field_name: The uncoverable field for coverage failures.
    """

    def __init__(
        self,
        type_name: str,
        constraint: str,
        field_name: str | None = None,
    ) -> None:
        self.type_name = type_name
        self.constraint = constraint
        self.field_name = field_name
        if constraint == "coverage":
            message = f"No action can set field '{field_name}' of {type_name}"
        else:
            message = f"No constructing action available for {type_name}"
        super().__init__(message)


class ContractViolation(PlainCodeError):
    """
    Raised when a precondition of a core operation is violated.

    This can occur when:
    - An object is registered twice with the recorder
    - A method end refers to an unknown call id
    - An action subset violating the plan constraints is assembled
    """

    def __init__(self, message: str = "Contract violation") -> None:
        super().__init__(message)


class InstantiationError(PlainCodeError):
    """
    Raised when a reconstruction plan cannot be instantiated.

    Attributes:
        placeholder: The meta-variable (field) that has no value.
    """

    def __init__(self, placeholder: str) -> None:
        self.placeholder = placeholder
        super().__init__(f"No value for meta-variable '{placeholder}'")


class TraceEncodingError(PlainCodeError):
    """Raised when an event or record cannot be written in the wire format."""

    def __init__(self, message: str = "Unencodable trace entry") -> None:
        super().__init__(message)


class LogCorruptionError(PlainCodeError):
    """
    Raised when a trace log is inconsistent.

    Attributes:
        line_number: 1-based line of the offending entry (header is line 1).
    """

    def __init__(
        self, message: str = "Corrupted trace log", line_number: int | None = None
    ) -> None:
        self.line_number = line_number
        if line_number is not None:
            message = f"{message} (line {line_number})"
        super().__init__(message)


class TraceDecodingError(LogCorruptionError):
    """Raised when a line of the wire format cannot be parsed."""


class ResolutionError(PlainCodeError):
    """
    Raised when an object id cannot be resolved to a reconstruction.

    Attributes:
        object_id: The unknown object id.
        logical_time: The requested logical time, if any.
    """

    def __init__(self, object_id: int, logical_time: int | None = None) -> None:
        self.object_id = object_id
        self.logical_time = logical_time
        reference = (
            f"{object_id}@{logical_time}" if logical_time is not None else str(object_id)
        )
        super().__init__(f"Cannot resolve object {reference}")


class EmissionError(PlainCodeError):
    """
    Raised when strict emission meets an unresolvable reference.

    Attributes:
        reference: The ``id@time`` marker that could not be replaced.
    """

    def __init__(self, reference: str) -> None:
        self.reference = reference
        super().__init__(f"Unresolvable object reference {reference}")


class RecorderFailedError(PlainCodeError):
    """
    Raised when recording after the persistence thread has failed.
    """

    def __init__(self, message: str = "Recorder is in a failed state") -> None:
        super().__init__(message)
