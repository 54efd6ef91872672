"""Exception types shared across the package.

Dimension/contract violations raise plain ValueError; these classes cover
the two failure families the CLI maps to distinct exit codes.
"""


class DataError(Exception):
    """Malformed or inconsistent input data (files, labels, encodings)."""


class NumericError(Exception):
    """Numeric failure: NaN/Inf during training, or a failed gradient check."""
