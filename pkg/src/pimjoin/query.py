"""
User-visible queries on top of the RLU pipeline and the join structures.

Results never depend on timing parameters; costs depend only on the access
pattern, not on which keys match.
"""

from __future__ import annotations

import csv
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import CapacityError, ConfigError, InvariantError, StateError
from .memory import (BankState, MemoryGeometry, TimingParams, access_row, burst_transfer_cycles,
                     single_burst_cycles)
from .rlu import (LatencyReport, PipelineTrace, RluConfig, double_buffer_total, run_join_stream)
from .search import BucketEntry, probe
from .state import (PimState, fact_load_cycles, fact_range_writes, populate_pim, split_evenly,
                    write_cost)
from .structures import (DEFAULT_VALUE_BITS, build_dictionary, build_hash_structures,
                         check_duplication_list, check_unique_keys, check_structures)


@dataclass
class SetupReport:
    """Setup split into host-side construction and PIM population."""

    distinct_keys: int
    dim_rows: int
    fact_rows: int
    duplicated_keys: int
    construction_seconds: float
    population_cycles: int
    population_seconds: float

    def to_dict(self, wall_clock: bool = True) -> dict:
        d = dict(self.__dict__)
        if not wall_clock:
            d.pop("construction_seconds")
        return d


def build_join(dim_keys, fact_keys, geometry: MemoryGeometry, timing: TimingParams, *,
               ranks: Optional[Sequence[int]] = None, code_bits: Optional[int] = None,
               value_bits: int = DEFAULT_VALUE_BITS, natural=None,
               validate: bool = True) -> Tuple[PimState, SetupReport]:
    """Build dictionary, hash table and duplication list for `dim_keys` and
    place them, with the encoded fact column, into PIM.

    Dimension row indices are positions in `dim_keys`.
    """
    dim_keys = np.asarray(dim_keys, dtype=np.int64)
    t0 = time.perf_counter()
    dictionary = build_dictionary(dim_keys.tolist(), geometry, code_bits=code_bits,
                                  value_bits=value_bits, natural=natural)
    pairs = list(zip(dim_keys.tolist(), range(len(dim_keys))))
    table, dup = build_hash_structures(pairs, dictionary)
    construction = time.perf_counter() - t0
    if validate:
        check_structures(table, dup, dictionary)
    fact_keys = np.asarray(fact_keys, dtype=np.int64)
    n_ranks = geometry.total_ranks if ranks is None else len(ranks)
    # an oversized fact column is populated with its first partition only;
    # join() streams the rest with double buffering
    resident = fact_keys[:resident_fact_capacity(geometry, dictionary.code_bits) * n_ranks]
    state, cycles = populate_pim(table, dup, resident, dictionary, geometry, timing, ranks)
    state.fact_codes = dictionary.encode_array(fact_keys)
    report = SetupReport(len(dictionary), len(dim_keys), len(fact_keys), len(dup), construction,
                         cycles, timing.cycles_to_seconds(cycles))
    return state, report


def resident_fact_capacity(geometry: MemoryGeometry, key_bits: int) -> int:
    """Fact keys one rank's regular chips can hold."""
    return geometry.regular_chips * geometry.row_buffer_bits // key_bits * geometry.rows_per_chip


@dataclass
class JoinResult:
    """Inner-join rows as parallel arrays of fact and dimension row indices."""

    fact_idx: np.ndarray
    dim_idx: np.ndarray
    keys: np.ndarray
    misses: int = 0

    def __len__(self):
        return len(self.fact_idx)

    def pairs(self) -> Counter:
        return Counter(zip(self.fact_idx.tolist(), self.dim_idx.tolist()))

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["key", "fact_index", "dim_index"])
            w.writerows(zip(self.keys.tolist(), self.fact_idx.tolist(), self.dim_idx.tolist()))


def expand_payloads(payloads: Sequence, pim: PimState, fact_codes: np.ndarray,
                    offset: int = 0) -> Tuple[List[int], List[int], List[int], int, int]:
    """Turn per-key probe payloads into join rows via the duplication list."""
    fi, di, keys = [], [], []
    misses = expanded = 0
    dup, decode = pim.dup, pim.dictionary.decode
    for j, p in enumerate(payloads):
        if p is None:
            misses += 1
            continue
        value, flag = p
        key = decode(int(fact_codes[j]))
        if flag:
            idxs = dup[value]
            expanded += len(idxs)
            fi.extend([offset + j] * len(idxs))
            di.extend(idxs)
            keys.extend([key] * len(idxs))
        else:
            fi.append(offset + j)
            di.append(value)
            keys.append(key)
    return fi, di, keys, misses, expanded


def join(pim: PimState, cfg: Optional[RluConfig] = None, *, host_cycles_per_row: int = 0,
         record: bool = False, tracing: bool = False) -> Tuple[JoinResult, LatencyReport]:
    """Probe every stored fact key and expand matches on the host.

    A fact column beyond PIM capacity is processed in partitions, loading
    the next while the current one is probed.
    """
    if not pim.populated:
        raise StateError("join structures are not built and populated")
    codes = np.asarray(pim.fact_codes, dtype=np.int64)
    per_part = pim.fact_capacity_per_rank * len(pim.ranks)
    bounds = [(s, min(s + per_part, len(codes))) for s in range(0, len(codes), per_part)] or [(0, 0)]
    fi: List[int] = []
    di: List[int] = []
    keys: List[int] = []
    misses = expanded = 0
    loads, probes = [], []
    trace: Optional[PipelineTrace] = None
    for s, e in bounds:
        part = codes[s:e]
        payloads, tr = run_join_stream(part, pim, cfg, record=record, tracing=tracing and len(bounds) == 1)
        f, d, k, m, x = expand_payloads(payloads, pim, part, s)
        fi += f
        di += d
        keys += k
        misses += m
        expanded += x
        probes.append(tr.total_cycles)
        if len(bounds) > 1:
            loads.append(fact_load_cycles(pim, e - s))
        trace = tr if trace is None else _merge_counts(trace, tr)
    total = probes[0] if len(bounds) == 1 else double_buffer_total(loads, probes)
    if len(bounds) > 1:
        trace.total_cycles = total
    report = LatencyReport(total, pim.timing.cycles_to_seconds(total), loads, probes, trace,
                           host_expanded_rows=expanded, host_cycles=expanded * host_cycles_per_row)
    result = JoinResult(np.array(fi, dtype=np.int64), np.array(di, dtype=np.int64),
                        np.array(keys, dtype=np.int64), misses)
    return result, report


def _merge_counts(a: PipelineTrace, b: PipelineTrace) -> PipelineTrace:
    for k, v in b.counts().items():
        if k != "total_cycles":
            setattr(a, k, getattr(a, k) + v)
    return a


@dataclass
class QueryCost:
    cycles: int
    activations: int
    bursts: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def select_distinct(pim: PimState, rank_id: Optional[int] = None) -> Tuple[set, QueryCost]:
    """All stored keys; one activation per non-empty bucket row plus its read bursts."""
    rank_id = pim.ranks[0] if rank_id is None else rank_id
    g, t = pim.geometry, pim.timing
    bank = BankState()
    cycles = bursts = 0
    entry_bits = pim.table.fmt.entry_bits
    for b in pim.table.non_empty_buckets():
        read = burst_transfer_cycles(pim.table.buckets[b].occupancy, g, t, entry_bits)
        cycles += access_row(bank, pim.bucket_location(b, rank_id), t) + read
        bursts += read // single_burst_cycles(t)
    values = {pim.dictionary.decode(code) for code, _, _ in pim.table.items()}
    return values, QueryCost(cycles, bank.activations, bursts)


def select_where_eq(pim: PimState, literal) -> Tuple[List[int], QueryCost]:
    """Row indices whose key equals `literal`, at the price of exactly one probe."""
    code = pim.dictionary.encode(literal)
    probe_code = pim.table.layout.null_code if code is None else code
    bank = BankState()
    res = probe(pim, probe_code, bank, pim.ranks[0])
    if res.payload is None:
        rows: List[int] = []
    else:
        value, flag = res.payload
        rows = list(pim.dup[value]) if flag else [value]
    return rows, QueryCost(res.cycles, bank.activations, 1)


# updates --------------------------------------------------------------------

@dataclass(frozen=True)
class FactTarget:
    position: int


@dataclass(frozen=True)
class BucketTarget:
    bucket: int
    slot: int


@dataclass
class UpdateResult:
    hit: bool
    cycles: int


def _fact_rank(pim: PimState, position: int) -> Tuple[int, int]:
    for rank_id, (s, e) in zip(pim.ranks, split_evenly(len(pim.fact_codes), len(pim.ranks))):
        if s <= position < e:
            return rank_id, position - s
    raise CapacityError(f"fact position {position} outside the stored column of {len(pim.fact_codes)}")


def _check_code(pim: PimState, code: int) -> None:
    if not 0 <= code < (1 << pim.key_bits):
        raise InvariantError(f"code {code} does not fit {pim.key_bits} bits")


def entry_update(pim: PimState, target: Union[FactTarget, BucketTarget],
                 payload: Union[int, BucketEntry, None]) -> UpdateResult:
    """Single-row write of one fact code or one bucket slot.

    Bucket writes reach every rank's replica in parallel, so they cost one write.
    """
    pim.require_populated()
    bank = BankState()
    if isinstance(target, FactTarget):
        code = int(payload)
        _check_code(pim, code)
        rank_id, local = _fact_rank(pim, target.position)
        cycles = access_row(bank, pim.fact_location(local, rank_id), pim.timing)
        pim.fact_codes[target.position] = code
    elif isinstance(target, BucketTarget):
        if not 0 <= target.bucket < pim.table.layout.num_buckets:
            raise InvariantError(f"bucket {target.bucket} outside the table")
        row = pim.table.row(target.bucket)
        row.write_slot(target.slot, payload)
        check_unique_keys(pim.table)
        cycles = access_row(bank, pim.bucket_location(target.bucket, pim.ranks[0]), pim.timing)
    else:
        raise ConfigError(f"unknown update target {target!r}")
    return UpdateResult(True, cycles + single_burst_cycles(pim.timing))


def index_update(pim: PimState, key: Hashable, new_value: int) -> UpdateResult:
    """Search `key` on PIM and overwrite its value in place, keeping the dup flag.

    A miss leaves the table unchanged; the cost is the same either way.
    """
    pim.require_populated()
    code = pim.dictionary.encode(key)
    probe_code = pim.table.layout.null_code if code is None else code
    res = probe(pim, probe_code, BankState(), pim.ranks[0])
    cycles = res.cycles + single_burst_cycles(pim.timing)
    if res.payload is None:
        return UpdateResult(False, cycles)
    _, flag = res.payload
    if flag and not 0 <= new_value < len(pim.dup):
        raise InvariantError(f"value {new_value} is not a valid duplication handle")
    bucket, tag = pim.table.split(code)
    row = pim.table.buckets[bucket]
    slot = int(np.flatnonzero(row.tags == tag)[0])
    row.write_slot(slot, BucketEntry(tag, int(new_value), flag))
    if flag:
        check_duplication_list(pim.table, pim.dup)
    return UpdateResult(True, cycles)


def table_update(pim: PimState, start: int, codes) -> int:
    """Burst-write a contiguous run of fact codes starting at global position `start`."""
    pim.require_populated()
    codes = np.asarray(codes, dtype=np.int64)
    end = start + len(codes)
    if start < 0 or end > len(pim.fact_codes):
        raise CapacityError(f"range [{start}, {end}) outside the stored column of {len(pim.fact_codes)}")
    for c in codes.tolist():
        _check_code(pim, c)
    cycles = 0
    for rank_id, (s, e) in zip(pim.ranks, split_evenly(len(pim.fact_codes), len(pim.ranks))):
        lo, hi = max(s, start), min(e, end)
        if lo < hi:
            cycles += write_cost(fact_range_writes(pim, rank_id, lo - s, hi - s), pim.geometry, pim.timing)
    pim.fact_codes[start:end] = codes
    return cycles


# star join ------------------------------------------------------------------

@dataclass
class StarJoinResult:
    per_dim: Dict[str, JoinResult]
    reports: Dict[str, LatencyReport]
    rank_groups: Dict[str, List[int]]
    total_cycles: int

    def matched_fact_rows(self) -> np.ndarray:
        """Fact rows that found a partner in every dimension."""
        sets = [set(r.fact_idx.tolist()) for r in self.per_dim.values()]
        return np.array(sorted(set.intersection(*sets)) if sets else [], dtype=np.int64)


def rank_groups(names: Sequence[str], geometry: MemoryGeometry,
                ranks: Optional[Sequence[int]] = None) -> Dict[str, List[int]]:
    ranks = list(range(geometry.total_ranks)) if ranks is None else list(ranks)
    if len(ranks) < len(names):
        raise ConfigError(f"{len(names)} dimensions need at least as many ranks, got {len(ranks)}")
    return {n: [ranks[i] for i in range(k, len(ranks), len(names))] for k, n in enumerate(names)}


def star_join(fact_columns: Dict[str, np.ndarray], dim_keys: Dict[str, np.ndarray],
              geometry: MemoryGeometry, timing: TimingParams, cfg: Optional[RluConfig] = None,
              ranks: Optional[Sequence[int]] = None) -> StarJoinResult:
    """Join one fact table against several dimensions, each with its own hash
    table on a disjoint group of ranks; the groups run in parallel."""
    groups = rank_groups(list(dim_keys), geometry, ranks)
    per_dim, reports = {}, {}
    for name, keys in dim_keys.items():
        state, _ = build_join(keys, fact_columns[name], geometry, timing, ranks=groups[name])
        per_dim[name], reports[name] = join(state, cfg)
    total = max((r.total_cycles for r in reports.values()), default=0)
    return StarJoinResult(per_dim, reports, groups, total)
