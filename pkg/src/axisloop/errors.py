"""Exception types raised across the pipeline."""


class AxisLoopError(Exception):
    """Base class for every error raised by axisloop."""


class ParallelLines(AxisLoopError):
    """Two 2D lines are parallel within tolerance."""


class DegenerateCloud(AxisLoopError):
    """Too few points, or a collinear top-down projection, to fit a box."""


class EmptyMotionPart(AxisLoopError):
    """No point survived OBB subtraction and refiltering."""


class InsufficientMotion(AxisLoopError):
    """Displacement between two OBB centers is below the gate."""


class DegenerateRotation(AxisLoopError):
    """Midlines are near-parallel, or the sign rule is undecidable."""


class NoValidWindow(AxisLoopError):
    """No frame pair passed the motion gates."""


class DegenerateEstimate(AxisLoopError):
    """Estimated pivot collapses onto the grip point."""


class GraspLost(AxisLoopError):
    """The grasp slipped off the handle."""


class ConfigError(AxisLoopError):
    """Malformed or inconsistent experiment configuration."""


class ParseError(AxisLoopError):
    """Malformed PLY input."""

    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
