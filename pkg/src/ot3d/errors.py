"""Exception types shared across the package."""


class Ot3dError(Exception):
    """Base class for all package errors."""


class InputError(Ot3dError):
    """Malformed input data (files, argument values, inconsistent sizes).

    Carries the offending path and 1-based line number when they are
    known, so command-line reporting can point at the exact spot.
    """

    def __init__(self, message, path=None, line=None):
        self.message = message
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
            if line is not None:
                prefix += f"{line}:"
            prefix += " "
        super().__init__(prefix + message)


class NumericError(Ot3dError):
    """Numerical failure that the algorithms cannot recover from."""
