"""Exception hierarchy.

Every error carries a short ``code`` used by the command line as a
machine-parseable prefix (``error[shape]: ...``).
"""


class VehicleColorError(Exception):
    code = "error"


class ShapeError(VehicleColorError, ValueError):
    code = "shape"


class InvalidParameterError(VehicleColorError, ValueError):
    code = "invalid-parameter"


class InvalidLabelError(VehicleColorError, ValueError):
    code = "invalid-label"


class NonFiniteError(VehicleColorError, FloatingPointError):
    code = "non-finite"


class UnsupportedConversionError(VehicleColorError, ValueError):
    code = "unsupported-conversion"


class EmptyInputError(VehicleColorError, ValueError):
    code = "empty-input"


class DatasetError(VehicleColorError):
    code = "dataset"


class DuplicatePathError(DatasetError, ValueError):
    code = "duplicate-path"


class ImageDecodeError(DatasetError):
    code = "image-decode"


class ConfigError(VehicleColorError, ValueError):
    code = "config"


class CheckpointError(VehicleColorError):
    code = "checkpoint"
