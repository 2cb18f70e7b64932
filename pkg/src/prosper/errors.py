"""Exception hierarchy shared by all engine modules."""


class ProsperError(Exception):
    """Base class for all engine errors."""


# -- geometry ---------------------------------------------------------------

class OpenMesh(ProsperError):
    """Mesh has at least one boundary or non-manifold edge."""


class InvertedOrientation(ProsperError):
    """Closed mesh has negative signed volume (inward-facing normals)."""


class DegenerateSegment(ProsperError):
    """Segment endpoints coincide."""


class FactorOutOfRange(ProsperError):
    """Volume scale factor outside the supported (0.5, 2.0] range."""


# -- robot ------------------------------------------------------------------

class JointLimitViolation(ProsperError):
    """Joint configuration violates the robot's joint limits."""


class Unreachable(ProsperError):
    """Pose outside the robot workspace; names the saturating joint."""

    def __init__(self, joint: str, message: str | None = None):
        self.joint = joint
        super().__init__(message or f"pose unreachable: joint '{joint}' saturates")


class IndexOutOfGrid(ProsperError):
    """Template hole index outside the 13x13 grid."""


# -- calibration ------------------------------------------------------------

class TooFewPoints(ProsperError):
    """Not enough observations/points for a well-posed solve."""


class DegenerateGeometry(ProsperError):
    """Point configuration is degenerate (e.g. collinear tips)."""


class CoplanarPoints(ProsperError):
    """All points lie in one plane where a 3-D fit is required."""


# -- shape model ------------------------------------------------------------

class TopologyMismatch(ProsperError):
    """Training meshes do not share one vertex count and face list."""


class TooFewShapes(ProsperError):
    """Fewer than two training shapes supplied."""


class CoefficientCountMismatch(ProsperError):
    """More mode coefficients than the model has modes."""


# -- registration -----------------------------------------------------------

class NonClosedMesh(ProsperError):
    """Registration requires closed surfaces."""


class VolumeRatioOutOfRange(ProsperError):
    """Source/target volumes differ by more than a factor of two."""


class NoConvergence(ProsperError):
    """Iteration budget exhausted before the tolerance was met."""


# -- planning ---------------------------------------------------------------

class InfeasibleNoTrajectories(ProsperError):
    """Every candidate trajectory is blocked by the pubic arch."""


class TargetOutsideWorkspace(ProsperError):
    """No in-workspace trajectory intersects the target."""


# -- simulation -------------------------------------------------------------

class PassiveStopTriggered(ProsperError):
    """Needle-arch contact force exceeded the passive stop threshold."""

    def __init__(self, time_s: float, detail: str = ""):
        self.time_s = time_s
        super().__init__(f"passive stop at t={time_s:.3f}s {detail}".rstrip())


class TipOutsideProstate(ProsperError):
    """Seed deposit requested while the needle tip is outside the gland."""


class FractionOutOfRange(ProsperError):
    """Edema fraction outside [0, 0.2] without the override flag."""


# -- documents / io ---------------------------------------------------------

class UnknownKind(ProsperError):
    """Document kind not in the supported set."""


class UnsupportedVersion(ProsperError):
    """Document version not readable by this build."""


class UnknownScenario(ProsperError):
    """Scenario name not in the bundled set."""


# -- service ----------------------------------------------------------------

class UnknownSession(ProsperError):
    """No session with the given id."""


class RevisionConflict(ProsperError):
    """Mutation was issued against a stale session revision."""
