"""Exception hierarchy and process exit codes."""

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class EquimeshError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = EXIT_VALIDATION


class FormatError(EquimeshError):
    """A mesh, model or config file could not be parsed."""


class ValidationError(EquimeshError):
    """An input violates a structural contract (connectivity, shapes, config)."""


class TopologyError(EquimeshError):
    """A mesh query hit unusable connectivity (e.g. an isolated node)."""


class GeometryError(EquimeshError):
    """Degenerate geometry (collinear point set, empty hull)."""


class RecoveryError(EquimeshError):
    """Derivative recovery failed on a node neighbourhood."""

    def __init__(self, node, message):
        self.node = node
        super().__init__(f"node {node}: {message}")


class NumericalError(EquimeshError):
    """A numerical procedure failed to produce a usable result."""

    exit_code = EXIT_NUMERICAL


class PerturbationError(NumericalError):
    """Random node perturbation could not produce a valid mesh."""


class SolverError(NumericalError):
    """The linear solver failed."""


class AdaptationError(NumericalError):
    """Mesh adaptation produced an invalid mesh with rollback disabled."""


class TrainingDivergedError(NumericalError):
    """Training loss or parameters became non-finite."""
