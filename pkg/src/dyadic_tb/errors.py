"""Exception types raised across the package."""


class DyadicError(ValueError):
    pass


class GenerationOverflowError(DyadicError):
    """Requested children of a finest-generation cube."""


class AncestorAboveRootError(DyadicError):
    """Requested an ancestor above the root cube."""


class SpecMismatchError(DyadicError):
    """Operands live on different grids."""


class AccretivityViolation(DyadicError):
    """An adapted operator hit a cube whose b-average is numerically zero."""

    def __init__(self, cube, value):
        self.cube = cube
        self.value = value
        super().__init__(f"|[b]_Q| = {abs(value):.3e} below floor on cube {cube}")


class UnboundedKernelError(DyadicError):
    pass


class UnknownKernelError(DyadicError):
    pass


class DegenerateSeedError(DyadicError):
    pass


class RootStoppedError(DyadicError):
    """The top cube of a stopping-time decomposition already satisfies a stopping rule."""


class ConfigError(DyadicError):
    pass
