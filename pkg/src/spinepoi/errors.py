"""Exception hierarchy. Everything raised on purpose derives from SpinePoiError."""


class SpinePoiError(Exception):
    """Base class for all domain errors."""


class InvalidFrame(SpinePoiError):
    """Affine matrix is singular or malformed."""


class ConfigError(SpinePoiError):
    """A configuration value violates its invariants."""


class EmptySubregion(SpinePoiError):
    """A required subregion mask has no voxels."""


class EmptySpine(SpinePoiError):
    """The volume contains no corpus voxels at all."""


class InsufficientVertebrae(SpinePoiError):
    """Fewer control points than the centerline fit requires."""


class DegenerateCenterline(SpinePoiError):
    """Duplicate consecutive centers or a vanishing tangent."""


class DegenerateOrientation(SpinePoiError):
    """Posterior estimate vanished or is parallel to the cranio-caudal axis."""


class LabelDictionaryError(SpinePoiError):
    """Label dictionary is inconsistent or grouping is ambiguous."""


class RayOriginOutside(SpinePoiError):
    """Raycast origin has occupancy below 0.5."""


class RayMiss(SpinePoiError):
    """No inside sample found along the ray."""


class BisectionStartOutside(SpinePoiError):
    """2D bisection start point has occupancy below 0.5."""


class BisectionDiverged(SpinePoiError):
    """Bisection exceeded its iteration budget."""


class PhantomDegenerate(SpinePoiError):
    """Phantom geometry is unrepresentable on the requested grid."""


class ParseError(SpinePoiError):
    """Malformed binary input. Carries the byte offset of the offending field."""

    def __init__(self, message, byte_offset=None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class NotALabelMap(SpinePoiError):
    """Volume payload cannot be interpreted as integer labels."""


class FormatError(SpinePoiError):
    """A JSON document violates its schema (duplicate keys, bad fields)."""


class VersionError(SpinePoiError):
    """A JSON document declares an unsupported version."""
