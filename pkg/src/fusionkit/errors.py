"""Exception hierarchy.

The CLI maps :class:`DataError` to exit code 2 and :class:`NumericalError`
to exit code 3.
"""


class FusionError(Exception):
    """Base class for all fusionkit errors."""

    def to_dict(self):
        return {"error": type(self).__name__, "message": str(self)}


class DataError(FusionError, ValueError):
    """Invalid input: malformed files, block mismatch, bad configuration."""

    def __init__(self, message, *, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column

    def to_dict(self):
        out = super().to_dict()
        if self.row is not None:
            out["row"] = self.row
        if self.column is not None:
            out["column"] = self.column
        return out


class NumericalError(FusionError, ArithmeticError):
    """A fit or transform hit a singular, non-finite or non-PD quantity."""

    def __init__(self, message, *, iteration=None, row=None):
        super().__init__(message)
        self.iteration = iteration
        self.row = row

    def to_dict(self):
        out = super().to_dict()
        if self.iteration is not None:
            out["iteration"] = self.iteration
        if self.row is not None:
            out["row"] = self.row
        return out
