"""Exception types shared across the toolkit.

Every failure that callers are expected to catch has a named class; generic
``ValueError``/``TypeError`` are reserved for plain programming mistakes.
"""


class DsmpcError(Exception):
    """Base class for all toolkit errors."""


class ModelFileError(DsmpcError):
    """Model or scenario document does not conform to the file schema."""


class DimensionMismatch(DsmpcError):
    """Block or matrix dimensions are inconsistent with the declared sizes."""


class GraphNotBidirectional(DsmpcError):
    """The coupling graph violates j in N_i  <=>  i in N_j."""


class NoiseNotPD(DsmpcError):
    """A noise covariance is not symmetric positive (semi)definite."""


class UnstableClosedLoop(DsmpcError):
    """rho(A + B K) is not strictly below one."""


class UnboundedConstraintSet(DsmpcError):
    """A constraint polytope leaves some coordinate unbounded."""


class NonSquare(DsmpcError):
    """A square matrix was expected."""


class RiccatiDivergence(DsmpcError):
    """The Riccati fixed-point iteration failed to converge."""


class NotSchurStable(DsmpcError):
    """An operation required a Schur-stable matrix."""


class DistributedBoundDiverges(DsmpcError):
    """The scaled block-diagonal covariance recursion has no fixed point."""

    def __init__(self, message, spectral_radius=None):
        super().__init__(message)
        self.spectral_radius = spectral_radius


class InvalidProbability(DsmpcError):
    """A probability level fell outside the open interval (0, 1)."""


class NegativeDiagonal(DsmpcError):
    """A covariance diagonal entry is negative beyond numerical tolerance."""


class EmptyTightenedSet(DsmpcError):
    """Constraint tightening produced an empty polytope."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class InvarianceCertificateFailed(DsmpcError):
    """The terminal quadratic function is not invariant under the gain."""


class DegenerateConstraint(DsmpcError):
    """A tightened constraint row has nonpositive offset."""


class InfeasibleSteadyStateSet(DsmpcError):
    """No admissible steady state exists for the tightened sets."""


class NumericalBreakdown(DsmpcError):
    """A matrix factorization failed inside the solver."""


class NotPD(DsmpcError):
    """A symmetric positive definite matrix was expected."""


class TopologyMismatch(DsmpcError):
    """Consensus topology is inconsistent with the agents' problems."""


class InitialInfeasible(DsmpcError):
    """The very first optimal control problem admits no feasible solution."""


class ArtifactModelMismatch(DsmpcError):
    """A synthesis artifact was built from a different model file."""
