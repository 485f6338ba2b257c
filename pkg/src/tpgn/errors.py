"""Exception types shared across the library.

The CLI maps these onto process exit codes (config -> 2, data -> 3,
divergence -> 4), so raising the right class matters.
"""


class TpgnError(Exception):
    """Base class for all library errors."""


class DimensionError(TpgnError, ValueError):
    """Shapes, axes or permutations that do not fit the operation."""


class ContractError(TpgnError, ValueError):
    """An API precondition was violated (non-scalar backward root, L < 2, ...)."""


class ConfigError(TpgnError, ValueError):
    """Invalid or inconsistent run configuration."""


class DataError(TpgnError, ValueError):
    """Unreadable, malformed or insufficient input data."""


class DivergenceError(TpgnError, RuntimeError):
    """Training produced non-finite numbers.

    Carries the last good checkpoint and epoch log so a run can be
    salvaged by the caller.
    """

    def __init__(self, message, checkpoint=None, log=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.log = log
