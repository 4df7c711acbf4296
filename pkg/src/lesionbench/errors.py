"""Exception hierarchy shared across the toolkit."""


class LesionBenchError(Exception):
    """Base class for all toolkit errors."""


class VolumeFormatError(LesionBenchError, ValueError):
    pass


class MalformedHeader(VolumeFormatError):
    pass


class UnsupportedDatatype(VolumeFormatError):
    pass


class TruncatedPayload(VolumeFormatError):
    pass


class NonFiniteVoxel(VolumeFormatError):
    pass


class DimensionMismatch(LesionBenchError, ValueError):
    pass


class GeometryMismatch(LesionBenchError, ValueError):
    pass


class NonPositiveParams(LesionBenchError, ValueError):
    pass


class RegionOutOfBounds(LesionBenchError, ValueError):
    pass


class EmptyReference(LesionBenchError, ValueError):
    """A metric that needs a lesion-positive reference got an empty one."""


class BothEmpty(LesionBenchError, ValueError):
    pass


class EmptyPopulation(LesionBenchError, ValueError):
    pass


class InsufficientPopulation(LesionBenchError, ValueError):
    pass


class MissingIntensity(LesionBenchError, ValueError):
    pass


class EmptySubset(LesionBenchError, ValueError):
    pass


class InsufficientAlgorithms(LesionBenchError, ValueError):
    pass


class TooFewPairs(LesionBenchError, ValueError):
    pass


class TooFewMasks(LesionBenchError, ValueError):
    pass


class SchemaViolation(LesionBenchError, ValueError):
    pass


class DuplicateCase(SchemaViolation):
    pass


class MissingFile(LesionBenchError, FileNotFoundError):
    pass


class PlacementFailure(LesionBenchError, RuntimeError):
    pass


class IoFailure(LesionBenchError, OSError):
    pass
