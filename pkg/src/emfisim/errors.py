"""Exception hierarchy shared by all modules."""


class EmfiSimError(Exception):
    """Base class for every domain error raised by the package."""


class InvalidReal(EmfiSimError, ValueError):
    pass


class InvalidQuant(EmfiSimError, ValueError):
    pass


class OutOfBounds(EmfiSimError, IndexError):
    pass


class UnknownTensor(EmfiSimError, KeyError):
    pass


class LengthMismatch(EmfiSimError, ValueError):
    pass


class ManifestMismatch(EmfiSimError, ValueError):
    pass


class ShapeMismatch(EmfiSimError, ValueError):
    pass


class DegenerateBaseline(EmfiSimError, RuntimeError):
    """Clean model accuracy is too close to random guessing to run a campaign."""
