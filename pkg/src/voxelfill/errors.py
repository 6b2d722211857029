"""Exception hierarchy shared by every voxelfill module."""


class VoxelfillError(Exception):
    """Base class; the CLI maps these to exit status 2."""


class ConfigError(VoxelfillError, ValueError):
    pass


class InvalidVolume(VoxelfillError, ValueError):
    pass


class RangeMismatch(VoxelfillError, ValueError):
    pass


class DimMismatch(VoxelfillError, ValueError):
    pass


class EmptyMask(VoxelfillError, ValueError):
    pass


class DegenerateNormalizer(VoxelfillError, ValueError):
    pass


class MaskOverlap(VoxelfillError, ValueError):
    pass


class FormatError(VoxelfillError):
    """Unreadable file: bad magic, version or dtype code."""


class TruncatedFile(FormatError):
    pass


class CorruptCheckpoint(VoxelfillError):
    pass


class ShapeError(VoxelfillError, ValueError):
    pass


class NotScalar(ShapeError):
    pass


class DegenerateInstance(ShapeError):
    pass


class InvalidRate(VoxelfillError, ValueError):
    pass


class WindowTooLarge(ShapeError):
    pass


class EmptyReport(VoxelfillError, ValueError):
    pass


class MaskGenFailure(VoxelfillError):
    """Rejection sampling ran out of attempts (brain too crowded by tumor)."""


class BrainTooLarge(VoxelfillError, ValueError):
    pass


class SplitError(VoxelfillError, ValueError):
    pass


class DivergenceError(VoxelfillError):
    """Training produced a non-finite loss.

    ``history`` holds the per-epoch records collected before the abort.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])
