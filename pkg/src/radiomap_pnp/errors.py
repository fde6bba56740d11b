"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions are inconsistent with the operation."""


class RangeError(IndexError):
    """A grid coordinate or linear index is out of range."""


class NumericalError(RuntimeError):
    """A numerical routine (factorization, eigensolver, scaling) failed."""


class DegenerateKernelError(ValueError):
    """A denoising kernel has an empty row and cannot be normalized."""


class RankDeficiencyError(RuntimeError):
    """Column selection collapsed before the requested rank was reached."""


class PluginProtocolError(RuntimeError):
    """An external denoiser process violated the stdio framing protocol."""


class DivergenceError(RuntimeError):
    """Solver residual exceeded the divergence guard."""


class UnsupportedDenoiserError(TypeError):
    """The requested analysis needs an explicit linear denoising matrix."""


class ConfigError(ValueError):
    """A configuration document is malformed; `key` names the offender."""

    def __init__(self, key, message):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key
