"""Exception hierarchy shared by all modules."""


class OrbharmError(Exception):
    """Base class for every error raised by the package."""


class ClosureExceedsCap(OrbharmError):
    pass


class NotEffective(OrbharmError):
    pass


class NotOrthogonal(OrbharmError):
    pass


class AtlasError(OrbharmError):
    """Structurally malformed atlas (dangling chart ids, dimension mismatch)."""


class PointNotCovered(OrbharmError):
    pass


class InconsistentIsotropy(OrbharmError):
    pass


class MissingLift(OrbharmError):
    pass


class PointTooCloseToBoundary(OrbharmError):
    pass


class ImageOutsideTargetChart(OrbharmError):
    pass


class UnsupportedValence(OrbharmError):
    pass


class Diverged(OrbharmError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class NonEquivariantBoundary(OrbharmError):
    pass


class NotFiniteOrder(OrbharmError):
    pass


class MetricNotInvariant(OrbharmError):
    pass


class NonCompactLeaves(OrbharmError):
    pass


class LeafNotPreserved(OrbharmError):
    pass


class ScenarioNotApplicable(OrbharmError):
    pass


class SchemaError(OrbharmError):
    pass


class CheckFailed(OrbharmError):
    pass
