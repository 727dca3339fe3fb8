"""Exception hierarchy.

Each class carries the process exit code the command line runner maps it to.
"""


class EdgeKDError(Exception):
    exit_code = 4
    kind = "internal"


class ConfigError(EdgeKDError, ValueError):
    """Invalid hyperparameter, layer layout or run configuration."""

    exit_code = 2
    kind = "config"


class ShapeError(EdgeKDError, ValueError):
    """Array dimensions do not line up."""

    exit_code = 3
    kind = "shape"


class DataError(EdgeKDError, ValueError):
    """Input data violates a content rule (labels, class counts, empty input)."""

    exit_code = 3
    kind = "data"


class SchemaError(DataError):
    """A column named in the schema config is missing from a file."""

    kind = "schema"


class ProtocolError(EdgeKDError):
    """Reports or model lists that cannot be combined (misaligned, empty)."""

    exit_code = 4
    kind = "protocol"
