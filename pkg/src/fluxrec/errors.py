"""Exception hierarchy shared across the package.

Two failure families matter to callers: bad configuration/input (CLI exit
code 2) and numerical breakdown (CLI exit code 3). Everything else is a bug
and is allowed to surface as a plain traceback.
"""


class ConfigError(ValueError):
    """Invalid configuration, file format, or CLI arguments."""


class NumericalError(RuntimeError):
    """A numerical procedure failed to meet its contract."""


class ConvergenceError(NumericalError):
    """An iterative solver ran out of iterations or produced invalid state."""


class BvlsError(NumericalError):
    """The bounded-variable least-squares solver exceeded its pivot budget."""
