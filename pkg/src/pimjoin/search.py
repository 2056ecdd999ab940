"""
Subarray search engine: packed bucket rows, the comparator array that sits
behind each row buffer, and the match-select encoder.

A bucket row holds `capacity` fixed-width entries. Empty slots carry the
all-ones tag, which the dictionary never hands out, so occupancy needs no
separate bitmap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np

from .errors import ConfigError, CorruptedTableError, InvariantError
from .memory import BankState, TimingParams, access_row, single_burst_cycles


class BucketEntry(NamedTuple):
    tag: int
    value: int
    dup_flag: int = 0


class EntryFormat(NamedTuple):
    """Bit widths of one packed entry: tag | value | flag (flag is the MSB)."""

    tag_bits: int
    value_bits: int  # includes the dup flag

    @property
    def entry_bits(self) -> int:
        return self.tag_bits + self.value_bits

    @property
    def payload_bits(self) -> int:
        return self.value_bits - 1

    @property
    def sentinel(self) -> int:
        return (1 << self.tag_bits) - 1

    def pack(self, e: BucketEntry) -> int:
        return e.tag | (e.value << self.tag_bits) | (e.dup_flag << (self.entry_bits - 1))

    def unpack(self, word: int) -> BucketEntry:
        tag = word & self.sentinel
        value = (word >> self.tag_bits) & ((1 << self.payload_bits) - 1)
        flag = (word >> (self.entry_bits - 1)) & 1
        return BucketEntry(tag, value, flag)


class BucketRow:
    """One hash bucket, resident in one PIM subarray row."""

    __slots__ = ("bucket_id", "fmt", "tags", "values", "flags", "occupancy")

    def __init__(self, bucket_id: int, capacity: int, fmt: EntryFormat):
        if capacity < 1:
            raise ConfigError("bucket capacity must be >= 1")
        self.bucket_id = bucket_id
        self.fmt = fmt
        self.tags = np.full(capacity, fmt.sentinel, dtype=np.int64)
        self.values = np.zeros(capacity, dtype=np.int64)
        self.flags = np.zeros(capacity, dtype=np.uint8)
        self.occupancy = 0

    @property
    def capacity(self) -> int:
        return len(self.tags)

    def entries(self):
        for i in range(self.capacity):
            if self.tags[i] != self.fmt.sentinel:
                yield i, BucketEntry(int(self.tags[i]), int(self.values[i]), int(self.flags[i]))

    def _check_fields(self, e: BucketEntry) -> None:
        if not 0 <= e.tag < self.fmt.sentinel:
            raise InvariantError(f"tag {e.tag} does not fit {self.fmt.tag_bits} bits or is the empty sentinel")
        if not 0 <= e.value < (1 << self.fmt.payload_bits):
            raise InvariantError(f"value {e.value} does not fit {self.fmt.payload_bits} bits")
        if e.dup_flag not in (0, 1):
            raise InvariantError("dup_flag must be 0 or 1")

    def insert(self, e: BucketEntry) -> int:
        """Store in the first free slot; returns the slot index."""
        self._check_fields(e)
        if np.any(self.tags == e.tag):
            raise InvariantError(f"tag {e.tag} already present in bucket {self.bucket_id}")
        free = np.flatnonzero(self.tags == self.fmt.sentinel)
        if len(free) == 0:
            raise InvariantError(f"bucket {self.bucket_id} is full ({self.capacity} entries)")
        slot = int(free[0])
        self.tags[slot] = e.tag
        self.values[slot] = e.value
        self.flags[slot] = e.dup_flag
        self.occupancy += 1
        return slot

    def write_slot(self, slot: int, e: Optional[BucketEntry]) -> None:
        """Raw slot write (entry update). None clears the slot."""
        if not 0 <= slot < self.capacity:
            raise InvariantError(f"slot {slot} outside bucket of {self.capacity}")
        if e is None:
            if self.tags[slot] != self.fmt.sentinel:
                self.occupancy -= 1
            self.tags[slot] = self.fmt.sentinel
            self.values[slot] = 0
            self.flags[slot] = 0
            return
        self._check_fields(e)
        others = np.flatnonzero(self.tags == e.tag)
        if any(int(i) != slot for i in others):
            raise InvariantError(f"tag {e.tag} would be duplicated in bucket {self.bucket_id}")
        if self.tags[slot] == self.fmt.sentinel:
            self.occupancy += 1
        self.tags[slot] = e.tag
        self.values[slot] = e.value
        self.flags[slot] = e.dup_flag

    def to_bytes(self, row_bits: int) -> bytes:
        """Pack into a row image, little-endian bit order, slot 0 lowest."""
        word = 0
        w = self.fmt.entry_bits
        for i in range(self.capacity):
            e = BucketEntry(int(self.tags[i]), int(self.values[i]), int(self.flags[i]))
            word |= self.fmt.pack(e) << (i * w)
        return word.to_bytes(row_bits // 8, "little")

    @classmethod
    def from_bytes(cls, data: bytes, bucket_id: int, capacity: int, fmt: EntryFormat) -> "BucketRow":
        row = cls(bucket_id, capacity, fmt)
        word = int.from_bytes(data, "little")
        mask = (1 << fmt.entry_bits) - 1
        for i in range(capacity):
            e = fmt.unpack((word >> (i * fmt.entry_bits)) & mask)
            if e.tag != fmt.sentinel:
                row.tags[i], row.values[i], row.flags[i] = e.tag, e.value, e.dup_flag
                row.occupancy += 1
        return row


def compare_row(row: BucketRow, probe_tag: int) -> np.ndarray:
    """Comparator array: one output bit per slot, set on an occupied tag match."""
    # an all-ones probe tag can only equal empty slots, which never match
    if probe_tag == row.fmt.sentinel:
        return np.zeros(row.capacity, dtype=bool)
    return row.tags == probe_tag


def match_select(mv: np.ndarray, row: BucketRow) -> Optional[Tuple[int, int]]:
    if len(mv) != row.capacity:
        raise ValueError("match vector length differs from bucket capacity")
    hits = np.flatnonzero(mv)
    if len(hits) == 0:
        return None
    if len(hits) > 1:
        raise CorruptedTableError(
            f"{len(hits)} comparators fired in bucket {row.bucket_id}; keys must be unique")
    i = hits[0]
    return int(row.values[i]), int(row.flags[i])


class ProbeResult(NamedTuple):
    payload: Optional[Tuple[int, int]]
    cycles: int


def search_bucket(row: Optional[BucketRow], tag: int) -> Optional[Tuple[int, int]]:
    # uninitialised rows behave as empty buckets
    if row is None:
        return None
    return match_select(compare_row(row, tag), row)


def probe_cost(state: BankState, loc, timing: TimingParams) -> int:
    return access_row(state, loc, timing) + timing.t_CMP + single_burst_cycles(timing)


def probe(pim, key_code: int, bank_state: Optional[BankState] = None, rank_id: int = 0) -> ProbeResult:
    """Look up one encoded key on the PIM chip of `rank_id`.

    The cost is one row access for the bucket, the comparator delay and
    one result burst, whatever the row occupancy or match outcome.
    """
    table = pim.table
    if bank_state is None:
        bank_state = BankState()
    bucket, tag = table.split(key_code)
    loc = pim.bucket_location(bucket, rank_id)
    cycles = probe_cost(bank_state, loc, pim.timing)
    return ProbeResult(search_bucket(table.buckets.get(bucket), tag), cycles)
