"""Exception hierarchy shared by all pipeline stages."""


class XgmlError(Exception):
    """Base class for every error raised by this package."""


# ingest
class NotAVolume(XgmlError):
    pass


class UnsupportedDatatype(XgmlError):
    pass


class DimensionMismatch(XgmlError):
    pass


class GridMismatch(XgmlError):
    pass


class EmptyRegion(XgmlError):
    def __init__(self, region_id, message=None):
        self.region_id = region_id
        super().__init__(message or f"region {region_id} has no voxels")


class MissingColumn(XgmlError):
    pass


class NonNumericCell(XgmlError):
    pass


class MissingOutcome(XgmlError):
    def __init__(self, subject_id, columns=()):
        self.subject_id = subject_id
        self.columns = tuple(columns)
        cols = ", ".join(self.columns)
        super().__init__(f"subject {subject_id!r} is missing outcome(s): {cols}")


class InvalidAtlasTable(XgmlError):
    pass


class InvalidManifest(XgmlError):
    pass


# density
class DegenerateSamples(XgmlError):
    def __init__(self, message="samples have zero variance", region_id=None):
        self.region_id = region_id
        if region_id is not None:
            message = f"region {region_id}: {message}"
        super().__init__(message)


class NonPositiveBandwidth(XgmlError):
    pass


# dtw
class EmptySequence(XgmlError):
    pass


class NonFiniteValue(XgmlError):
    pass


class PairError(XgmlError):
    """A DTW failure tagged with the region pair that caused it."""

    def __init__(self, pair, cause):
        self.pair = pair
        self.cause = cause
        super().__init__(f"regions {pair}: {cause}")


# graph
class EmptyGroup(XgmlError):
    pass


class InconsistentDimensions(XgmlError):
    pass


class InvalidGraph(XgmlError):
    pass


# model
class TooFewRows(XgmlError):
    pass


class NonFiniteTarget(XgmlError):
    pass


class WidthMismatch(XgmlError):
    pass


class DegenerateFold(XgmlError):
    pass


class SolverStall(UserWarning):
    """Iteration cap hit while the KKT violation was still large."""


# importance
class TooFewEdges(XgmlError):
    pass


class UnknownRegion(XgmlError):
    pass


# synth
class InvalidSpec(XgmlError):
    pass
