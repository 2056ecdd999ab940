"""Exception hierarchy shared by every simulator module.

Each class carries the process exit code the CLI maps it to.
"""


class PimError(Exception):
    exit_code = 1


class ConfigError(PimError, ValueError):
    """Invalid geometry, timing, RLU setting or config file."""

    exit_code = 2


class InvariantError(PimError):
    """A structural invariant (unique keys, index consistency, ...) is violated."""

    exit_code = 3


class CorruptedTableError(InvariantError):
    """More than one comparator fired for a single probe."""


class CapacityError(PimError):
    exit_code = 4


class StateError(PimError):
    """Operation issued against structures that are not built/populated."""

    exit_code = 3


class RejectedCommandError(PimError):
    exit_code = 2


class WorkloadError(PimError, ValueError):
    """Degenerate or out-of-domain workload description."""

    exit_code = 2
