"""Exception hierarchy shared by all pipeline stages."""


class HetGraspError(Exception):
    """Base class for every error raised deliberately by this package."""


class InvalidArgumentError(HetGraspError, ValueError):
    pass


class ConfigError(HetGraspError, ValueError):
    pass


class DegenerateObjectError(HetGraspError, ValueError):
    pass


class RenderBoundsError(HetGraspError, ValueError):
    pass


class InsufficientDataError(HetGraspError, ValueError):
    pass


class ShapeError(HetGraspError, ValueError):
    pass


class ContractError(HetGraspError, RuntimeError):
    pass


class EmptyMetricError(HetGraspError, ValueError):
    pass


class CalibrationError(HetGraspError, RuntimeError):
    pass


class MissingArtifactError(HetGraspError, FileNotFoundError):
    """An upstream artifact is absent; the message names the producing subcommand."""
