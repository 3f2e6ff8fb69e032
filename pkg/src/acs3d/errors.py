"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes or channel counts are inconsistent with an operation."""


class ConfigError(ValueError):
    """A convolution/pooling configuration is invalid for the given input."""


class GraphError(ValueError):
    """A model graph, node, or model file violates the schema."""


class WeightFormatError(ValueError):
    """A weight container file is malformed.

    ``code`` is a stable machine-readable tag: one of ``bad_magic``,
    ``bad_version``, ``truncated``, ``bad_offset``, ``overlap``,
    ``duplicate_name``, ``bad_name``, ``bad_dtype``, ``bad_rank``.
    """

    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code


class OracleSubsetError(ValueError):
    """A configuration falls outside the block-sparse oracle's documented subset."""


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""
