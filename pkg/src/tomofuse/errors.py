"""Exception hierarchy shared by all tomofuse modules."""


class TomofuseError(Exception):
    """Base class for every error raised by this package."""


# volcore
class ConstantVolume(TomofuseError, ValueError):
    pass


class BadMagic(TomofuseError, ValueError):
    pass


class ShapeOverflow(TomofuseError, ValueError):
    pass


class TruncatedFile(TomofuseError, ValueError):
    pass


class InvalidSpec(TomofuseError, ValueError):
    pass


class InvalidVolume(TomofuseError, ValueError):
    pass


# fusion
class InvalidDepth(TomofuseError, ValueError):
    pass


# featpool / learner
class ShapeUnsupported(TomofuseError, ValueError):
    pass


class ShapeMismatch(TomofuseError, ValueError):
    pass


class LengthMismatch(TomofuseError, ValueError):
    pass


class MissingClass(TomofuseError, ValueError):
    pass


class NonSquareRotation(TomofuseError, ValueError):
    pass


# eval
class DegenerateLabels(TomofuseError, ValueError):
    pass


# cli
class ConfigError(TomofuseError, ValueError):
    pass
