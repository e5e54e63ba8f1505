"""Exception types shared across the package."""


class SehgnnError(Exception):
    """Base class for package errors."""


class DataError(SehgnnError):
    """Invalid input data or a violated file/contract invariant.

    The CLI maps this to exit code 2.
    """
