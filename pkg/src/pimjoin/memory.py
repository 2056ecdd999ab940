"""
Memory hierarchy model: geometry, DRAM timing, address mapping and the
open-page row-buffer cost primitives.

All costs are in memory-clock cycles. The model is deliberately simple:
one row buffer per subarray, open-page policy, and three access classes

    hit       row already open                 t_CAS
    cold      no row open in the subarray      t_RCD + t_CAS
    conflict  a different row is open          t_RP + t_RCD + t_CAS

Regular chips and the PIM chip of a rank keep independent row state.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from .errors import CapacityError, ConfigError

HIT, COLD, CONFLICT = "hit", "cold", "conflict"


@dataclass(frozen=True)
class MemoryGeometry:
    """Shape of the simulated memory system.

    Defaults follow an 8-channel DDR4 server with 16 DIMMs, x8 chips,
    65536 rows per bank (128 subarrays of 512 rows) and 1024 columns.
    """

    channels: int = 8
    dimms_per_channel: int = 2
    ranks_per_dimm: int = 1
    chips_per_rank: int = 16
    pim_chips_per_rank: int = 1
    banks_per_chip: int = 16
    subarrays_per_bank: int = 128
    rows_per_subarray: int = 512
    columns_per_row: int = 1024
    chip_io_width: int = 8
    burst_length: int = 8

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"geometry field {f.name} must be an integer >= 1, got {v!r}")
        if self.pim_chips_per_rank != 1:
            raise ConfigError("exactly one PIM chip per rank is supported")
        if self.chips_per_rank < 2:
            raise ConfigError("a rank needs at least one regular chip besides the PIM chip")

    @property
    def total_ranks(self) -> int:
        return self.channels * self.dimms_per_channel * self.ranks_per_dimm

    @property
    def regular_chips(self) -> int:
        return self.chips_per_rank - self.pim_chips_per_rank

    @property
    def row_buffer_bits(self) -> int:
        """Row-buffer width of a single chip in bits."""
        return self.columns_per_row * self.chip_io_width

    @property
    def rows_per_bank(self) -> int:
        return self.subarrays_per_bank * self.rows_per_subarray

    @property
    def rows_per_chip(self) -> int:
        return self.banks_per_chip * self.rows_per_bank

    @property
    def row_span_bytes(self) -> int:
        # linear address stride of one rank-wide row (all chips)
        return self.chips_per_rank * self.row_buffer_bits // 8

    def bits_per_burst(self, chips: int = 1) -> int:
        return chips * self.chip_io_width * self.burst_length

    def to_dict(self) -> Dict[str, int]:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class TimingParams:
    """DRAM timing in memory-clock cycles; clock period in picoseconds."""

    clock_period_ps: int = 1250
    t_RCD: int = 22
    t_RP: int = 22
    t_CAS: int = 22
    t_CMP: int = 0
    burst_cycles: int = 4
    host_transfer_cycles: int = 0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ConfigError(f"timing field {f.name} must be an integer >= 0, got {v!r}")
        if self.clock_period_ps < 1:
            raise ConfigError("clock_period_ps must be >= 1")
        if not 0 <= self.t_CMP <= 4:
            raise ConfigError(f"t_CMP must lie in [0, 4], got {self.t_CMP}")

    def with_tcmp(self, t_cmp: int) -> "TimingParams":
        return dataclasses.replace(self, t_CMP=t_cmp)

    def cycles_to_seconds(self, cycles: int) -> float:
        return cycles * self.clock_period_ps * 1e-12

    def to_dict(self) -> Dict[str, int]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Location:
    channel: int
    dimm: int
    rank: int
    bank: int
    subarray: int
    row: int
    column_offset: int = 0
    pim: bool = False

    def subarray_key(self) -> Tuple:
        return (self.channel, self.dimm, self.rank, self.pim, self.bank, self.subarray)

    def validate(self, geometry: MemoryGeometry) -> None:
        bounds = (
            ("channel", self.channel, geometry.channels),
            ("dimm", self.dimm, geometry.dimms_per_channel),
            ("rank", self.rank, geometry.ranks_per_dimm),
            ("bank", self.bank, geometry.banks_per_chip),
            ("subarray", self.subarray, geometry.subarrays_per_bank),
            ("row", self.row, geometry.rows_per_subarray),
            ("column_offset", self.column_offset, geometry.row_span_bytes),
        )
        for name, v, bound in bounds:
            if not 0 <= v < bound:
                raise CapacityError(f"{name}={v} outside [0, {bound})")


def rank_coordinates(rank_id: int, geometry: MemoryGeometry) -> Tuple[int, int, int]:
    """Global rank id -> (channel, dimm, rank). Channels vary fastest."""
    if not 0 <= rank_id < geometry.total_ranks:
        raise CapacityError(f"rank id {rank_id} outside [0, {geometry.total_ranks})")
    channel = rank_id % geometry.channels
    rest = rank_id // geometry.channels
    return channel, rest % geometry.dimms_per_channel, rest // geometry.dimms_per_channel


def rank_id_of(loc: Location, geometry: MemoryGeometry) -> int:
    return (loc.rank * geometry.dimms_per_channel + loc.dimm) * geometry.channels + loc.channel


def map_bucket_to_location(bucket_id: int, geometry: MemoryGeometry, rank_id: int = 0,
                           pim: bool = True) -> Location:
    """Place a bucket (or any linear row index) on a chip.

    Consecutive ids stripe across banks first, then subarrays, then rows.
    """
    limit = geometry.rows_per_chip
    if not 0 <= bucket_id < limit:
        raise CapacityError(f"bucket {bucket_id} exceeds chip capacity of {limit} rows")
    channel, dimm, rank = rank_coordinates(rank_id, geometry)
    bank = bucket_id % geometry.banks_per_chip
    rest = bucket_id // geometry.banks_per_chip
    subarray = rest % geometry.subarrays_per_bank
    row = rest // geometry.subarrays_per_bank
    return Location(channel, dimm, rank, bank, subarray, row, 0, pim)


def location_to_bucket(loc: Location, geometry: MemoryGeometry) -> int:
    return (loc.row * geometry.subarrays_per_bank + loc.subarray) * geometry.banks_per_chip + loc.bank


def location_to_address(loc: Location, geometry: MemoryGeometry) -> int:
    """Documented geometry-to-linear byte address mapping.

    From most to least significant: channel, dimm, rank, chip kind
    (0 regular, 1 PIM), bank, subarray, row, byte offset within the
    rank-wide row span.
    """
    g = geometry
    a = loc.channel
    a = a * g.dimms_per_channel + loc.dimm
    a = a * g.ranks_per_dimm + loc.rank
    a = a * 2 + int(loc.pim)
    a = a * g.banks_per_chip + loc.bank
    a = a * g.subarrays_per_bank + loc.subarray
    a = a * g.rows_per_subarray + loc.row
    return a * g.row_span_bytes + loc.column_offset


def address_to_location(addr: int, geometry: MemoryGeometry) -> Location:
    g = geometry
    addr, col = divmod(addr, g.row_span_bytes)
    addr, row = divmod(addr, g.rows_per_subarray)
    addr, sub = divmod(addr, g.subarrays_per_bank)
    addr, bank = divmod(addr, g.banks_per_chip)
    addr, pim = divmod(addr, 2)
    addr, rank = divmod(addr, g.ranks_per_dimm)
    channel, dimm = divmod(addr, g.dimms_per_channel)
    if channel >= g.channels:
        raise CapacityError(f"address beyond channel {g.channels - 1}")
    return Location(channel, dimm, rank, bank, sub, row, col, bool(pim))


@dataclass
class BankState:
    """Open-row tracker; one entry per (rank, chip kind, bank, subarray)."""

    open_rows: Dict[Tuple, int] = field(default_factory=dict)
    cycle_now: int = 0
    hits: int = 0
    cold: int = 0
    conflicts: int = 0

    @property
    def activations(self) -> int:
        return self.cold + self.conflicts

    def open_row(self, loc: Location) -> Optional[int]:
        return self.open_rows.get(loc.subarray_key())

    def classify(self, loc: Location) -> str:
        cur = self.open_rows.get(loc.subarray_key())
        if cur is None:
            return COLD
        return HIT if cur == loc.row else CONFLICT


def row_access_cost(kind: str, timing: TimingParams) -> int:
    if kind == HIT:
        return timing.t_CAS
    if kind == COLD:
        return timing.t_RCD + timing.t_CAS
    return timing.t_RP + timing.t_RCD + timing.t_CAS


def access_row(state: BankState, loc: Location, timing: TimingParams) -> int:
    """Charge one column access under the open-page policy and update state."""
    key = loc.subarray_key()
    cur = state.open_rows.get(key)
    if cur is None:
        cost = timing.t_RCD + timing.t_CAS
        state.cold += 1
    elif cur == loc.row:
        cost = timing.t_CAS
        state.hits += 1
    else:
        cost = timing.t_RP + timing.t_RCD + timing.t_CAS
        state.conflicts += 1
    state.open_rows[key] = loc.row
    state.cycle_now += cost
    return cost


def words_per_burst(geometry: MemoryGeometry, word_bits: int, chips: int = 1) -> int:
    if word_bits <= 0:
        raise ConfigError("word width must be positive")
    return geometry.bits_per_burst(chips) // word_bits


def burst_transfer_cycles(words: int, geometry: MemoryGeometry, timing: TimingParams,
                          word_bits: int = 32, chips: int = 1) -> int:
    """Cycles to move `words` words of `word_bits` bits across `chips` chips.

    A word wider than one burst occupies several whole bursts.
    """
    if words < 0:
        raise ValueError("word count must be non-negative")
    per_burst = words_per_burst(geometry, word_bits, chips)
    if per_burst >= 1:
        bursts = -(-words // per_burst)
    else:
        bursts = words * -(-word_bits // geometry.bits_per_burst(chips))
    return bursts * (timing.burst_cycles + timing.host_transfer_cycles)


def single_burst_cycles(timing: TimingParams) -> int:
    return timing.burst_cycles + timing.host_transfer_cycles
