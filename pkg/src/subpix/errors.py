"""Exception hierarchy shared by all subpix modules."""


class SubpixError(Exception):
    """Base class for every error raised by this package."""


class ArgumentError(SubpixError, ValueError):
    """An argument violates a documented precondition."""


class EmptyDomainError(ArgumentError):
    """The requested operation would produce an empty output domain."""


class StateError(SubpixError, RuntimeError):
    """An object is not in a state where the operation is allowed."""


class DegenerateError(SubpixError, ArithmeticError):
    """A closed form has no unique solution for the given inputs."""


class UndefinedResultError(SubpixError, ArithmeticError):
    """A statistic is undefined, e.g. because its sample is empty."""


class FormatError(SubpixError, ValueError):
    """A file does not follow the layout of its declared format.

    Parameters
    ----------
    message : str
        What went wrong.
    offset : int, optional
        Byte offset in the input at which the problem was detected.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset
