"""Exception hierarchy shared by all rqgmm modules."""


class RqError(Exception):
    """Base class for all errors raised by this package."""


class InputError(RqError, ValueError):
    """Invalid caller-supplied data: bad shapes, non-finite values, out-of-range arguments."""


class DataFormatError(RqError):
    """A file could not be parsed or failed validation.

    Carries the offending path and, where known, the byte offset of the
    problem so batch jobs can report actionable context.
    """

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        ctx = []
        if path is not None:
            ctx.append(f"file={path}")
        if offset is not None:
            ctx.append(f"byte_offset={offset}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)


class FitError(RqError):
    """A quantizer fit could not complete (e.g. persistent component starvation)."""


class InternalError(RqError):
    """Invariant violated inside the library; indicates a bug, not bad input."""


class DegenerateFitWarning(UserWarning):
    """A fit produced exactly duplicated codebook vectors or collapsed components."""
