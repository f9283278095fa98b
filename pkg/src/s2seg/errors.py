"""Exception types raised across the library."""


class S2SegError(Exception):
    """Base class for all library errors."""


class SymmetryViolation(S2SegError):
    """A spectrum declared real-valued breaks conjugate symmetry."""


class BandwidthMismatch(S2SegError):
    """Operands disagree on spherical bandwidth, or a target bandwidth is out of range."""


class ShapeMismatch(S2SegError):
    """Array shapes are inconsistent with the operation's contract."""


class NonFiniteActivation(S2SegError):
    """A network activation contains NaN or Inf."""


class TapeMismatch(S2SegError):
    """A gradient tape does not match the network or mode it is replayed against."""


class AllIgnored(S2SegError):
    """Every cell/point in a loss or metric computation carries the IGNORE label."""


class EmptyHistogram(S2SegError):
    """A class histogram contains no counts."""


class EmptyMatrix(S2SegError):
    """A confusion matrix with zero total count cannot yield metrics."""


class EmptyCloud(S2SegError):
    """A pointcloud operation received zero points."""


class OriginPoint(S2SegError):
    """A point lies too close to the sensor origin to project."""


class MalformedFile(S2SegError):
    """A binary cloud/label file has an invalid size or header."""


class CountMismatch(S2SegError):
    """Point count and label count disagree."""


class InvalidConfig(S2SegError):
    """A configuration value is out of range or a key is unknown."""


class EmptyList(S2SegError):
    """A dataset split was requested over an empty item list."""


class BandwidthTooSmall(S2SegError):
    """The requested input bandwidth cannot support the layer chain."""
