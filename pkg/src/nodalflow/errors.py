"""Exception hierarchy."""


class NodalFlowError(Exception):
    pass


class IndistinguishablePartitionError(NodalFlowError, ValueError):
    """Two partition points snapped onto the same grid node."""


class PoleError(NodalFlowError, ValueError):
    """Secular function evaluated too close to a pole."""


class DiscretizationError(NodalFlowError):
    """Sampled flow violated monotonicity; the grid is too coarse."""


class DegeneracyError(NodalFlowError):
    pass


class TruncationError(NodalFlowError):
    def __init__(self, message, needed=None):
        super().__init__(message)
        self.needed = needed


class GapError(NodalFlowError):
    pass


class ConsistencyError(NodalFlowError):
    pass


class DecompositionError(NodalFlowError):
    pass


class ShiftCollisionError(NodalFlowError):
    """The shift is (numerically) an eigenvalue of the Dirichlet-on-interface operator."""


class AmbiguousCountError(NodalFlowError):
    pass
