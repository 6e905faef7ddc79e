"""Exception hierarchy shared by all modules.

Every error raised on bad input derives from ``PoseError`` so the CLI can map
it to a validation exit code in one place.
"""


class PoseError(ValueError):
    pass


class SkeletonError(PoseError):
    pass


class DuplicateEdge(SkeletonError):
    pass


class DanglingEndpoint(SkeletonError):
    """Edge endpoint out of range, or an edge joining a keypoint to itself."""


class NotATree(SkeletonError):
    pass


class IndivisibleDims(PoseError):
    pass


class DimMismatch(PoseError):
    pass


class ChannelMismatch(PoseError):
    pass


class NoLabeledKeypoints(PoseError):
    pass


class InfeasibleConstraints(PoseError):
    pass


class ConfigError(PoseError):
    pass


class HeatmapFormatError(PoseError):
    pass
