"""
Rank-Level Unit model.

Each rank streams its slice of the encoded fact column through four
overlapping stages:

    S1  key fetch: one burst from the regular chips (row access + burst)
    S2  copy of the fetched key group into the RLU key buffer (1 cycle)
    S3  probe of the key's bucket row on the PIM chip
    S4  return of the match result to the host over the channel

S1/S2 work on key groups, S3/S4 on single keys. Keys that hit the
coalescing window skip S3/S4 and reuse the earlier result. S4 is the only
stage shared between ranks: results from ranks on the same channel are
serialised on its data bus.
"""

from __future__ import annotations

import enum
import heapq
import math
from bisect import bisect_right
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CapacityError, ConfigError, RejectedCommandError, StateError
from .memory import (BankState, MemoryGeometry, access_row, location_to_address, rank_coordinates,
                     single_burst_cycles)
from .search import search_bucket
from .state import PimState, fact_load_cycles, split_evenly

READ, WRITE = "READ", "WRITE"

# bits of key storage in the default buffer (64 entries of 32-bit keys)
DEFAULT_BUFFER_BITS = 64 * 32


class Mode(enum.Enum):
    DRAM = "DRAM"
    PIM = "PIM"


class Opcode(enum.IntEnum):
    PIM_START = 1
    PIM_OFF = 2
    JOIN = 3
    SELECT_DISTINCT = 4
    SELECT_WHERE = 5
    ENTRY_UPDATE = 6
    INDEX_UPDATE = 7
    TABLE_UPDATE = 8


# write target the RLU decodes as a command instead of data
COMMAND_ADDRESS = 0x3FFF_FFC0


@dataclass(frozen=True)
class RluConfig:
    """RLU parameters.

    key_buffer_capacity None sizes the buffer to 2048 bits of keys
    (64 entries at 32 bits), but never below the coalescing window.
    """

    key_buffer_capacity: Optional[int] = None
    coalesce_window: int = 8
    cpu_filter: bool = False
    mode: Mode = Mode.PIM

    def __post_init__(self):
        if self.coalesce_window < 1:
            raise ConfigError("coalesce_window must be >= 1")
        if self.key_buffer_capacity is not None and self.key_buffer_capacity < self.coalesce_window:
            raise ConfigError("key_buffer_capacity must be >= coalesce_window")

    def buffer_capacity(self, key_bits: int) -> int:
        if self.key_buffer_capacity is not None:
            return self.key_buffer_capacity
        return max(self.coalesce_window, DEFAULT_BUFFER_BITS // key_bits)


def keys_per_fetch_burst(geometry: MemoryGeometry, key_bits: int) -> float:
    return geometry.regular_chips * geometry.chip_io_width * geometry.burst_length / key_bits


def compute_stall_N(cfg: RluConfig, geometry: MemoryGeometry, key_bits: int) -> int:
    """Responses the RLU waits for before issuing more key fetches."""
    if key_bits <= 0:
        raise ConfigError("key_bits must be positive")
    cap = cfg.buffer_capacity(key_bits)
    kpb = math.ceil(keys_per_fetch_burst(geometry, key_bits))
    if kpb > cap:
        raise ConfigError(f"key buffer of {cap} entries cannot hold one fetch burst of {kpb} keys")
    return max(1, cap - kpb)


class Rlu:
    """Mode state machine driven by writes to the command address."""

    def __init__(self, cfg: Optional[RluConfig] = None):
        self.cfg = cfg or RluConfig()
        self.mode = self.cfg.mode

    def set_mode(self, cmd) -> Mode:
        try:
            op = Opcode(cmd)
        except ValueError:
            raise RejectedCommandError(f"unknown RLU opcode {cmd!r}") from None
        if op is Opcode.PIM_START:
            self.mode = Mode.PIM
        elif op is Opcode.PIM_OFF:
            self.mode = Mode.DRAM
        elif self.mode is not Mode.PIM:
            raise StateError(f"{op.name} issued while the rank is in DRAM mode")
        return self.mode

    def write(self, address: int, data: int) -> Mode:
        if address == COMMAND_ADDRESS:
            return self.set_mode(data)
        return self.mode

    @property
    def config(self) -> RluConfig:
        return replace(self.cfg, mode=self.mode)


class CoalesceWindow:
    """FIFO of the last `size` keys seen; each consumed key is inserted."""

    def __init__(self, size: int):
        self.size = size
        self.fifo: deque = deque()
        self.count: Counter = Counter()
        self.slot: Dict[int, int] = {}

    def lookup(self, key) -> Optional[int]:
        """Result slot of the most recent in-window occurrence, or None."""
        return self.slot[key] if self.count[key] else None

    def push(self, key, slot: int) -> None:
        if len(self.fifo) == self.size:
            old = self.fifo.popleft()
            self.count[old] -= 1
        self.fifo.append(key)
        self.count[key] += 1
        self.slot[key] = slot


def coalesce(window: CoalesceWindow, key, slot: int) -> Optional[int]:
    """Check then insert; returns the reused slot for an in-window duplicate."""
    hit = window.lookup(key)
    window.push(key, slot)
    return hit


@dataclass
class PipelineTrace:
    keys: int = 0
    key_fetch_bursts: int = 0
    probes_issued: int = 0
    probes_coalesced: int = 0
    host_filtered: int = 0
    row_activations: int = 0
    row_hits: int = 0
    fact_row_activations: int = 0
    results_returned: int = 0
    stall_cycles: int = 0
    total_cycles: int = 0
    rank_cycles: Dict[int, int] = field(default_factory=dict)
    stage_busy: Dict[int, Dict[str, int]] = field(default_factory=dict)
    timeline: List[Tuple[str, int, int, int]] = field(default_factory=list)
    records: List[Tuple[int, int, str]] = field(default_factory=list)

    def counts(self) -> Dict[str, int]:
        keys = ("keys", "key_fetch_bursts", "probes_issued", "probes_coalesced", "host_filtered",
                "row_activations", "row_hits", "fact_row_activations", "results_returned",
                "stall_cycles", "total_cycles")
        return {k: getattr(self, k) for k in keys}

    def to_dict(self) -> dict:
        d = self.counts()
        d["rank_cycles"] = {str(k): v for k, v in sorted(self.rank_cycles.items())}
        d["stage_busy"] = {str(k): v for k, v in sorted(self.stage_busy.items())}
        return d


@dataclass
class _RankRun:
    rank_id: int
    results: list
    ready: List[int]
    s2_last: int
    trace: PipelineTrace
    busy: Dict[str, int]


def _host_filter(codes: Sequence[int], window: int) -> Tuple[List[int], List[int]]:
    """Apply the coalescing window on the host side; returns kept positions and
    the source slot (or -1) for every position."""
    w = CoalesceWindow(window)
    kept, src = [], []
    for j, c in enumerate(codes):
        hit = coalesce(w, c, j)
        if hit is None:
            kept.append(j)
            src.append(-1)
        else:
            src.append(hit)
    return kept, src


def _run_rank(codes: List[int], rank_id: int, pim: PimState, cap: int, stall_n: int, group: int,
              window: int, record: bool, tracing: bool) -> _RankRun:
    timing, geometry = pim.timing, pim.geometry
    table = pim.table
    ib = table.index_bits
    mask = (1 << ib) - 1
    buckets = table.buckets
    burst1 = single_burst_cycles(timing)
    s3_tail = timing.t_CMP + burst1
    fact_bank, pim_bank = BankState(), BankState()
    tr = PipelineTrace(keys=len(codes))
    busy = {"S1": 0, "S2": 0, "S3": 0, "S4": 0}
    n = len(codes)
    d = [0] * n
    results: list = [None] * n
    ready: List[int] = []
    win = CoalesceWindow(window)
    kpr = pim.keys_per_row
    s1_free = s2_prev = s3_free = d_prev = 0
    pos = 0
    while pos < n:
        end = min(pos + group, n, (pos // kpr + 1) * kpr)
        t_ready = s1_free
        t_start = t_ready
        need = pos + (end - pos) - cap
        if need > 0 and d[need - 1] > t_ready:
            # buffer full: wait for stall_n keys to drain (at least enough to fit)
            drained = bisect_right(d, t_ready, 0, pos)
            target = min(pos, max(need, drained + stall_n))
            t_start = max(t_ready, d[target - 1])
        tr.stall_cycles += t_start - t_ready
        loc = pim.fact_location(pos, rank_id)
        c1 = access_row(fact_bank, loc, timing) + burst1
        if tracing:
            tr.records.append((t_start, location_to_address(loc, geometry), READ))
        s1_end = t_start + c1
        s1_free = s1_end
        s2_end = max(s1_end, s2_prev) + 1
        s2_prev = s2_end
        busy["S1"] += c1
        busy["S2"] += 1
        tr.key_fetch_bursts += 1
        if record:
            tr.timeline.append(("S1", rank_id, t_start, s1_end))
            tr.timeline.append(("S2", rank_id, s2_end - 1, s2_end))
        for j in range(pos, end):
            code = codes[j]
            slot = win.lookup(code)
            if slot is not None:
                dj = s2_end if s2_end > d_prev else d_prev
                results[j] = results[slot]
                tr.probes_coalesced += 1
            else:
                s3_start = max(s2_end, d_prev, s3_free)
                dj = s3_start
                bucket = code & mask
                bloc = pim.bucket_location(bucket, rank_id)
                c3 = access_row(pim_bank, bloc, timing) + s3_tail
                s3_free = s3_start + c3
                busy["S3"] += c3
                results[j] = search_bucket(buckets.get(bucket), code >> ib)
                ready.append(s3_free)
                if tracing:
                    tr.records.append((s3_start, location_to_address(bloc, geometry), READ))
                if record:
                    tr.timeline.append(("S3", rank_id, s3_start, s3_free))
            d[j] = dj
            d_prev = dj
            win.push(code, j)
        pos = end
    tr.probes_issued = len(ready)
    tr.row_activations = pim_bank.activations
    tr.row_hits = pim_bank.hits
    tr.fact_row_activations = fact_bank.activations
    return _RankRun(rank_id, results, ready, s2_prev, tr, busy)


def channel_bus_finish(ready_by_rank: Dict[int, List[int]], geometry: MemoryGeometry,
                       c4: int) -> Tuple[Dict[int, int], Dict[int, List[Tuple[int, int]]]]:
    """FIFO service of result returns per channel.

    `ready_by_rank` maps rank id to the (non-decreasing) cycles at which
    each of its results leaves S3. Returns the last S4 completion per rank
    and the (start, end) S4 intervals per rank.
    """
    by_channel: Dict[int, List[int]] = {}
    for r in ready_by_rank:
        by_channel.setdefault(rank_coordinates(r, geometry)[0], []).append(r)
    last = {r: 0 for r in ready_by_rank}
    spans: Dict[int, List[Tuple[int, int]]] = {r: [] for r in ready_by_rank}
    for ranks in by_channel.values():
        bus = 0
        streams = [[(t, r) for t in ready_by_rank[r]] for r in sorted(ranks)]
        for t, r in heapq.merge(*streams):
            start = t if t > bus else bus
            bus = start + c4
            last[r] = bus
            spans[r].append((start, bus))
    return last, spans


def merge_result_bus(runs: List[_RankRun], geometry: MemoryGeometry, c4: int, record: bool) -> List[int]:
    last, spans = channel_bus_finish({run.rank_id: run.ready for run in runs}, geometry, c4)
    totals = []
    for run in runs:
        run.busy["S4"] = c4 * len(run.ready)
        if record:
            run.trace.timeline.extend(("S4", run.rank_id, s, e) for s, e in spans[run.rank_id])
        totals.append(max(run.s2_last, last[run.rank_id]))
    return totals


def run_join_stream(fact_codes, pim: PimState, cfg: Optional[RluConfig] = None, *,
                    record: bool = False, tracing: bool = False) -> Tuple[list, PipelineTrace]:
    """Simulate streaming `fact_codes` through every rank's RLU.

    The codes are split into contiguous equal chunks, one per rank of
    `pim`, as they would be stored after population. Returns per-key
    payloads (None, or (value, dup_flag)) aligned with the input, and the
    aggregated PipelineTrace.
    """
    cfg = cfg or RluConfig()
    if cfg.mode is not Mode.PIM:
        raise StateError("RLU is in DRAM mode; issue PIM_START first")
    pim.require_populated()
    geometry = pim.geometry
    codes = np.asarray(fact_codes, dtype=np.int64)
    pim.check_fact_capacity(len(codes))
    key_bits = pim.key_bits
    cap = cfg.buffer_capacity(key_bits)
    stall_n = compute_stall_N(cfg, geometry, key_bits)
    group = int(keys_per_fetch_burst(geometry, key_bits))
    if group < 1:
        raise ConfigError(f"a {key_bits}-bit key does not fit one fetch burst")
    c4 = single_burst_cycles(pim.timing)

    results: list = [None] * len(codes)
    agg = PipelineTrace(keys=len(codes))
    runs: List[_RankRun] = []
    for rank_id, (s, e) in zip(pim.ranks, split_evenly(len(codes), len(pim.ranks))):
        chunk = codes[s:e].tolist()
        if cfg.cpu_filter:
            kept, src = _host_filter(chunk, cfg.coalesce_window)
            run = _run_rank([chunk[j] for j in kept], rank_id, pim, cap, stall_n, group,
                            cfg.coalesce_window, record, tracing)
            full: list = [None] * len(chunk)
            for k, j in enumerate(kept):
                full[j] = run.results[k]
            for j, sj in enumerate(src):
                if sj >= 0:
                    full[j] = full[sj]
            run.trace.host_filtered = len(chunk) - len(kept)
            run.trace.probes_coalesced += run.trace.host_filtered
            run.trace.keys = len(chunk)
            run.results = full
        else:
            run = _run_rank(chunk, rank_id, pim, cap, stall_n, group, cfg.coalesce_window, record, tracing)
        results[s:e] = run.results
        runs.append(run)

    # S4: results of ranks sharing a channel are serialised on its bus
    for run, total in zip(runs, merge_result_bus(runs, geometry, c4, record)):
        agg.rank_cycles[run.rank_id] = total

    for run in runs:
        t = run.trace
        for k in ("key_fetch_bursts", "probes_issued", "probes_coalesced", "host_filtered",
                  "row_activations", "row_hits", "fact_row_activations", "stall_cycles"):
            setattr(agg, k, getattr(agg, k) + getattr(t, k))
        agg.stage_busy[run.rank_id] = run.busy
        agg.timeline.extend(t.timeline)
        agg.records.extend(t.records)
    agg.results_returned = agg.probes_issued
    agg.total_cycles = max(agg.rank_cycles.values(), default=0)
    agg.records.sort(key=lambda r: (r[0], r[1]))
    return results, agg


@dataclass
class LatencyReport:
    total_cycles: int
    seconds: float
    loads: List[int] = field(default_factory=list)
    probes: List[int] = field(default_factory=list)
    trace: Optional[PipelineTrace] = None
    # host-side duplication expansion, kept apart from the pipeline cycles
    host_expanded_rows: int = 0
    host_cycles: int = 0

    def to_dict(self) -> dict:
        d = {"total_cycles": self.total_cycles, "seconds": self.seconds,
             "loads": self.loads, "probes": self.probes,
             "host_expanded_rows": self.host_expanded_rows, "host_cycles": self.host_cycles}
        if self.trace is not None:
            d["pipeline"] = self.trace.to_dict()
        return d


def double_buffer_total(loads: Sequence[int], probes: Sequence[int]) -> int:
    """load(first) + sum(max(load(i+1), probe(i))) + probe(last)."""
    if not loads:
        return 0
    total = loads[0]
    for i in range(len(loads) - 1):
        total += max(loads[i + 1], probes[i])
    return total + probes[-1]


def run_double_buffered(fact_partitions: Sequence, pim: PimState,
                        cfg: Optional[RluConfig] = None) -> LatencyReport:
    """Overlap loading partition i+1 into the regular chips with probing partition i."""
    loads, probes = [], []
    for part in fact_partitions:
        n = len(part)
        try:
            loads.append(fact_load_cycles(pim, n))
        except CapacityError as e:
            raise CapacityError(f"partition of {n} keys overflows PIM fact capacity: {e}") from None
        _, tr = run_join_stream(part, pim, cfg)
        probes.append(tr.total_cycles)
    total = double_buffer_total(loads, probes)
    return LatencyReport(total, pim.timing.cycles_to_seconds(total), loads, probes)
