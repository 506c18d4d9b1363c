"""Exception types shared across the simulator."""


class SimError(Exception):
    """Base class for all simulator errors."""


class MalformedDocument(SimError):
    """Map document is syntactically or structurally invalid."""


class UnsupportedGeometry(SimError):
    """Map uses a plan-view geometry primitive outside the supported subset."""


class DanglingLink(SimError):
    """A road or lane link references an element that does not exist."""


class NoRoute(SimError):
    """No lane-level path connects the requested origin and destination."""


class OutOfCorridor(SimError):
    """Point projects farther from the reference line than the corridor allows."""


class ProjectionAmbiguous(SimError):
    """Two distinct arc lengths project equally close to the query point."""


class CurvatureSingularity(SimError):
    """Lateral offset reaches the local center of curvature."""


class NonPositiveGap(SimError):
    """Car-following gap must be strictly positive."""


class NoLegalAction(SimError):
    """Decision state offers no legal action."""


class AllInfeasible(SimError):
    """Every candidate trajectory collides or violates limits."""


class SingularBoundary(SimError):
    """Boundary conditions do not admit a solution (e.g. zero duration)."""


class BadLog(SimError):
    """Persisted episode log is missing or malformed."""


class ConnectionClosed(SimError):
    """Peer closed the protocol connection."""


class ProtocolViolation(SimError):
    """Peer sent a message outside the wire contract."""


class BadMessage(SimError):
    """Message is not valid JSON or violates the envelope schema."""


class BadTrajectory(SimError):
    """Agent trajectory breaks monotonicity or horizon limits."""


class UnknownMetaAction(SimError):
    """Agent named a meta-action outside the vocabulary."""


class NoEgo(SimError):
    """Operation requires an ego vehicle but none exists."""


class ConfigError(SimError):
    """Scenario configuration is invalid."""
