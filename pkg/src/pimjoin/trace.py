"""
Per-access trace export and replay.

One line per access: ``0x<byte address> READ|WRITE <issue cycle>``, after a
``#`` header line naming the geometry fingerprint and timing. Addresses
come from `location_to_address`.
"""

from __future__ import annotations

import json
from typing import Dict, Iterable, List, Sequence, TextIO, Tuple

from .errors import ConfigError
from .memory import (BankState, MemoryGeometry, TimingParams, access_row, address_to_location,
                     rank_id_of, single_burst_cycles)
from .rlu import PipelineTrace, channel_bus_finish

HEADER_PREFIX = "# pimjoin-trace v1 "


def export_trace(trace: PipelineTrace, geometry: MemoryGeometry, timing: TimingParams, fp: TextIO) -> int:
    """Write the records of a traced run; returns the number of access lines."""
    meta = {"geometry": geometry.fingerprint(), "timing": timing.to_dict()}
    fp.write(HEADER_PREFIX + json.dumps(meta, sort_keys=True) + "\n")
    for cycle, addr, op in trace.records:
        fp.write(f"0x{addr:x} {op} {cycle}\n")
    return len(trace.records)


def read_trace(lines: Iterable[str]) -> Tuple[dict, List[Tuple[int, str, int]]]:
    meta: dict = {}
    records = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith(HEADER_PREFIX):
                meta = json.loads(line[len(HEADER_PREFIX):])
            continue
        addr, op, cycle = line.split()
        records.append((int(addr, 16), op, int(cycle)))
    return meta, records


def replay_trace(records: Sequence[Tuple[int, str, int]], geometry: MemoryGeometry,
                 timing: TimingParams) -> int:
    """Recompute the run's total cycles from its access records.

    Row-access costs are recomputed from the decoded addresses with a fresh
    bank state. Regular-chip reads are key fetches (then the 1-cycle buffer
    copy), PIM reads are probes whose results contend for the channel bus.
    """
    burst = single_burst_cycles(timing)
    bank = BankState()
    s2_last: Dict[int, int] = {}
    ready: Dict[int, List[int]] = {}
    for addr, op, cycle in sorted(records, key=lambda r: r[2]):
        if op != "READ":
            continue
        loc = address_to_location(addr, geometry)
        rank = rank_id_of(loc, geometry)
        cost = access_row(bank, loc, timing)
        if loc.pim:
            ready.setdefault(rank, []).append(cycle + cost + timing.t_CMP + burst)
        else:
            s1_end = cycle + cost + burst
            s2_last[rank] = max(s1_end, s2_last.get(rank, 0)) + 1
    last, _ = channel_bus_finish(ready, geometry, burst)
    ranks = set(s2_last) | set(last)
    return max((max(s2_last.get(r, 0), last.get(r, 0)) for r in ranks), default=0)


def replay_file(path: str, geometry: MemoryGeometry, timing: TimingParams) -> int:
    with open(path) as f:
        meta, records = read_trace(f)
    if meta and meta.get("geometry") != geometry.fingerprint():
        raise ConfigError("trace geometry fingerprint does not match the configuration")
    return replay_trace(records, geometry, timing)
