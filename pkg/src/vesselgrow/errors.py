"""Exception hierarchy shared by every vesselgrow module."""


class VesselGrowError(Exception):
    """Base class for all errors raised by vesselgrow."""


class IoError(VesselGrowError, OSError):
    """A file could not be read or written."""


class FormatError(VesselGrowError, ValueError):
    """An image file uses an unsupported encoding."""


class PairingError(VesselGrowError, ValueError):
    """A dataset image has no ground truth, or the reverse."""


class DimensionError(VesselGrowError, ValueError):
    """Array shapes or feature counts do not agree."""


class ParamError(VesselGrowError, ValueError):
    """A filter or model parameter is out of its valid range."""


class BoundsError(VesselGrowError, IndexError):
    """A pixel coordinate lies outside the image."""


class SchemaError(VesselGrowError, ValueError):
    """A feature CSV does not have the expected header or column count."""


class EmptyDatasetError(VesselGrowError, ValueError):
    """Training was requested on a dataset without rows."""


class VersionError(VesselGrowError, ValueError):
    """A model file declares a format version this build cannot read."""


class CorruptModelError(VesselGrowError, ValueError):
    """A model file is truncated or fails its integrity check."""


class SingleClassError(VesselGrowError, ValueError):
    """ROC analysis needs both classes present."""


class DegenerateWarning(UserWarning):
    """Training rows share identical features but carry mixed labels."""
