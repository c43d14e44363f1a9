"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad user input or contract violation detected before heavy work.

    CLI maps this to exit code 1; unexpected runtime failures exit with 2.
    """
