"""
Reference joins on the host: a brute-force nested loop used as the
correctness oracle, and a timed classic hash join for speedup reporting.
"""

from __future__ import annotations

import os
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .errors import ConfigError

CAVEAT = ("modeled PIM cycles are compared against measured host wall-clock time; "
          "the ratio is indicative only, not a calibrated speedup")


def nested_loop_join(dim_keys, fact_keys) -> Counter:
    """Every (fact_index, dim_index) with equal keys, by comparing all pairs.

    Each dimension row is compared against the whole fact column.
    """
    dim_keys = np.asarray(dim_keys)
    fact_keys = np.asarray(fact_keys)
    out: Counter = Counter()
    for d, k in enumerate(dim_keys.tolist()):
        for f in np.flatnonzero(fact_keys == k).tolist():
            out[(f, d)] += 1
    return out


def distinct_oracle(values) -> set:
    return set(np.asarray(values).tolist())


def scan_oracle(values, literal) -> List[int]:
    return np.flatnonzero(np.asarray(values) == literal).tolist()


def _probe(table: Dict[int, List[int]], keys: List[int], offset: int, swap: bool):
    out = []
    for i, k in enumerate(keys):
        for m in table.get(k, ()):
            out.append((m, offset + i) if swap else (offset + i, m))
    return out


@dataclass
class HashJoinRun:
    pairs: Counter
    seconds: float
    threads: int
    build_side: str


def classic_hash_join(dim_keys, fact_keys, threads: int = 1) -> HashJoinRun:
    """Build on the smaller input, probe with the larger; pairs are (fact, dim)."""
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    dim_keys = np.asarray(dim_keys).tolist()
    fact_keys = np.asarray(fact_keys).tolist()
    build_dim = len(dim_keys) <= len(fact_keys)
    build, probe = (dim_keys, fact_keys) if build_dim else (fact_keys, dim_keys)
    t0 = time.perf_counter()
    table: Dict[int, List[int]] = {}
    for i, k in enumerate(build):
        table.setdefault(k, []).append(i)
    # probe output is (probe_idx, build_idx); flip when the fact side was built
    swap = not build_dim
    if threads == 1:
        pairs = _probe(table, probe, 0, swap)
    else:
        step = -(-len(probe) // threads) or 1
        with ThreadPoolExecutor(threads) as ex:
            parts = ex.map(lambda s: _probe(table, probe[s:s + step], s, swap), range(0, len(probe), step))
            pairs = [p for part in parts for p in part]
    seconds = time.perf_counter() - t0
    return HashJoinRun(Counter(pairs), seconds, threads, "dim" if build_dim else "fact")


def default_threads() -> int:
    return os.cpu_count() or 1


@dataclass
class SpeedupReport:
    workload_hash: str
    modeled_cycles: int
    clock_period_ps: int
    modeled_seconds: float
    baseline_seconds: float
    baseline_threads: int
    speedup: float
    config_fingerprint: str
    caveat: str = CAVEAT

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def compare_runs(pim_report: dict, baseline_time: float, clock_period_ps: int, *,
                 baseline_workload_hash: Optional[str] = None, threads: int = 1) -> SpeedupReport:
    """Speedup of the modeled PIM join over a measured host join.

    `pim_report` needs `workload_hash`, `total_cycles` and optionally
    `config_fingerprint`.
    """
    wh = pim_report["workload_hash"]
    if baseline_workload_hash is not None and baseline_workload_hash != wh:
        raise ConfigError(f"workload hash mismatch: {wh} vs {baseline_workload_hash}")
    if baseline_time <= 0:
        raise ConfigError("baseline time must be positive")
    cycles = int(pim_report["total_cycles"])
    modeled = cycles * clock_period_ps * 1e-12
    return SpeedupReport(wh, cycles, clock_period_ps, modeled, baseline_time, threads,
                         baseline_time / modeled if modeled > 0 else float("inf"),
                         pim_report.get("config_fingerprint", ""))
