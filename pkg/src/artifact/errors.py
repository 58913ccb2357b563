"""Exception types shared across modules."""


class ArtifactError(Exception):
    pass


class NonIntegerRatio(ArtifactError, ValueError):
    pass


class InfeasibleDegree(ArtifactError, ValueError):
    pass


class TooLarge(ArtifactError, ValueError):
    pass


class NotConnected(ArtifactError):
    pass


class Unreachable(ArtifactError):
    pass


class DegenerateSize(ArtifactError, ValueError):
    pass


class RoutingStuck(ArtifactError):
    def __init__(self, msg, path=None):
        super().__init__(msg)
        self.path = path


class Unreached(ArtifactError):
    def __init__(self, msg, stats=None):
        super().__init__(msg)
        self.stats = stats


class CoverageGap(ArtifactError):
    def __init__(self, square, stage, node=None):
        super().__init__(f"no eligible neighbour in square {square} at stage {stage}")
        self.square = square
        self.stage = stage
        self.node = node


class EmptyInput(ArtifactError, ValueError):
    pass


class DegenerateFit(ArtifactError, ValueError):
    pass


class MixedConfig(ArtifactError, ValueError):
    pass


class GraphFormatError(ArtifactError, ValueError):
    pass
