"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: usage 2, I/O 3, numeric 4.
"""


class VidpertError(Exception):
    pass


class ShapeError(VidpertError, ValueError):
    pass


class NumericError(VidpertError, ArithmeticError):
    pass


class UsageError(VidpertError, ValueError):
    pass


class TrainingError(VidpertError, RuntimeError):
    pass


class ParseError(VidpertError, OSError):
    """Malformed container or manifest. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class LoadError(VidpertError, OSError):
    pass
