"""Exception hierarchy shared by all modules.

Exit codes used by the CLI: 2 configuration, 3 solver, 4 invariant.
"""


class DynmcError(Exception):
    exit_code = 1


class ConfigError(DynmcError):
    """Invalid configuration (bad grid counts, unknown preset, ...)."""

    exit_code = 2


class SolverError(DynmcError):
    """A linear solve failed or a system is singular without a gauge."""

    exit_code = 3


class InvariantError(DynmcError):
    """A runtime invariant was violated (conservation, CFL, ...)."""

    exit_code = 4
