"""Simulator of a processing-in-memory hash join with subarray-level search engines."""

from .config import SimConfig, load_config
from .errors import (CapacityError, ConfigError, CorruptedTableError, InvariantError, PimError,
                     RejectedCommandError, StateError, WorkloadError)
from .memory import BankState, Location, MemoryGeometry, TimingParams
from .query import (build_join, entry_update, index_update, join, select_distinct, select_where_eq,
                    star_join, table_update)
from .rlu import RluConfig, run_join_stream
from .workload import WorkloadSpec, generate

__version__ = "0.1.0"
