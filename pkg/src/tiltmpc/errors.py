"""Exception types shared across the package."""


class TiltMpcError(Exception):
    """Base class for all package-specific errors."""


class AttitudeAntipodal(TiltMpcError):
    """Attitude error is a 180-degree rotation; the vector-part parameterization is undefined."""


class GimbalDegenerate(TiltMpcError):
    """Euler decomposition requested within tolerance of the pitch singularity."""


class DegenerateGeometry(TiltMpcError):
    """Platform geometry yields an allocation matrix with rank below 6."""


class RankDeficient(TiltMpcError):
    """Allocation pseudoinverse cannot be formed to tolerance."""


class NonFiniteLinearization(TiltMpcError):
    """A Jacobian entry evaluated to NaN or infinity."""


class QpInfeasible(TiltMpcError):
    """The QP constraint set is empty (or no feasible start is available)."""


class QpMaxIterations(TiltMpcError):
    """Active-set loop exceeded its iteration budget."""


class RateTooLow(TiltMpcError):
    """Training log sample rate is below the minimum required for differentiation."""


class NonUniformSampling(TiltMpcError):
    """Training log timestamps are not uniformly spaced."""


class SingularNormalEquations(TiltMpcError):
    """Ridge normal equations are singular (lambda = 0 with rank-deficient features)."""


class EmptyLog(TiltMpcError):
    """Metrics requested on an empty simulation log."""


class ConfigError(TiltMpcError):
    """Experiment configuration is invalid; message names the offending field."""
