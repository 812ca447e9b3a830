"""Exception taxonomy shared by all modules.

Every failure that carries dynamical meaning gets its own class so callers
can branch on it; plain ValueError is reserved for usage mistakes.
"""


class DynamicsError(Exception):
    """Base class for all toolkit errors."""


class OutOfDomain(DynamicsError):
    pass


class OrbitEscaped(DynamicsError):
    def __init__(self, step, point=None, msg=None):
        self.step = step
        self.point = point
        super().__init__(msg or f"orbit left the domain at step {step}")


class SingularJacobian(DynamicsError):
    pass


class NotUnimodal(DynamicsError):
    pass


class NotRenormalizable(DynamicsError):
    pass


class NormalizationFailed(DynamicsError):
    pass


class TieBreak(DynamicsError):
    """Two orbit points coincide within tolerance; the rank order is ambiguous."""


class Undecided(DynamicsError):
    """A periodicity or ordering check fell inside the safety margin."""


class TargetUnrealizable(DynamicsError):
    pass


class FullnessViolation(DynamicsError):
    pass


class DepthLimited(DynamicsError):
    pass


class RootNotBracketed(DynamicsError):
    pass


class LeafEscaped(DynamicsError):
    pass


class ChartFailure(DynamicsError):
    pass


class NotHenonLikeAfterChart(DynamicsError):
    def __init__(self, residual, tol, msg=None):
        self.residual = residual
        self.tol = tol
        super().__init__(msg or f"conjugated map residual {residual:.3e} exceeds {tol:.1e}")


class StripOverlap(DynamicsError):
    pass


class MappingViolation(DynamicsError):
    pass


class NoTangency(DynamicsError):
    pass


class DegenerateCurvature(DynamicsError):
    pass


class NonQuadratic(DynamicsError):
    pass


class Not1DRenormalizable(DynamicsError):
    pass


class InsufficientDepth(DynamicsError):
    pass
