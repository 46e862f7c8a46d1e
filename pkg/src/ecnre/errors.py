"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors -> 1, data errors -> 2,
numeric failures -> 3.
"""


class EcnreError(Exception):
    """Base class for all package errors."""


class DataError(EcnreError):
    """A problem with input data (datasets, sidecars, checkpoints)."""


class ParseError(DataError):
    """A dataset record that does not conform to the declared format."""


class SidecarError(DataError):
    """A malformed embedding or token-count sidecar file."""


class FeatureError(DataError):
    """Node feature assembly failed (e.g. a missing embedding row)."""


class LayoutMismatchError(DataError):
    """A checkpoint's feature layout does not match the requested inputs."""


class NumericError(EcnreError):
    """A non-finite value appeared where the training contract forbids it."""
