"""
Host-side construction of the join structures: the dictionary that turns
key values into fixed-width codes, the unique-key bucketed hash table, and
the duplication list that keeps repeated dimension keys out of PIM.

A code is split as ``tag << index_bits | bucket``; the low index bits pick
the PIM row, only the tag is stored and compared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Hashable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CapacityError, ConfigError, InvariantError
from .memory import MemoryGeometry
from .search import BucketEntry, BucketRow, EntryFormat

DEFAULT_VALUE_BITS = 32
DEFAULT_HEADROOM = 1.25


def bucket_of(code: int, index_bits: int) -> int:
    return code & ((1 << index_bits) - 1)


def tag_of(code: int, index_bits: int) -> int:
    return code >> index_bits


@dataclass(frozen=True)
class HashLayout:
    code_bits: int
    index_bits: int
    value_bits: int
    capacity: int

    @property
    def tag_bits(self) -> int:
        return self.code_bits - self.index_bits

    @property
    def num_buckets(self) -> int:
        return 1 << self.index_bits

    @property
    def fmt(self) -> EntryFormat:
        return EntryFormat(self.tag_bits, self.value_bits)

    @property
    def null_code(self) -> int:
        """All-ones code; its tag is the empty-slot sentinel so it never matches."""
        return (1 << self.code_bits) - 1

    def is_reserved(self, code: int) -> bool:
        return (code >> self.index_bits) == (1 << self.tag_bits) - 1


def plan_layout(n_keys: int, geometry: MemoryGeometry, *, code_bits: Optional[int] = None,
                value_bits: int = DEFAULT_VALUE_BITS, index_bits: Optional[int] = None,
                capacity: Optional[int] = None, headroom: float = DEFAULT_HEADROOM) -> HashLayout:
    """Choose code width, index bits and bucket capacity for `n_keys` distinct keys.

    index_bits = ceil(log2(min(needed, rows))) with
    needed = ceil(n_keys * headroom / capacity). Capacity is first estimated
    with full-width tags, then recomputed once the index bits are known
    (index bits are not stored, so the real capacity can only grow).
    """
    if value_bits < 2:
        raise ConfigError("value_bits must leave room for the dup flag")
    if code_bits is None:
        code_bits = max(1, n_keys.bit_length()) + 1
    if code_bits < 1 or code_bits > 62:
        raise ConfigError(f"code_bits {code_bits} outside [1, 62]")
    row_bits = geometry.row_buffer_bits
    if index_bits is None:
        est = capacity or row_bits // (code_bits + value_bits)
        if est < 1:
            raise ConfigError("a bucket row cannot hold a single entry")
        needed = max(1, math.ceil(n_keys * headroom / est))
        index_bits = max(0, math.ceil(math.log2(min(needed, geometry.rows_per_chip))))
        index_bits = min(index_bits, code_bits - 1)
    if not 0 <= index_bits < code_bits:
        raise ConfigError(f"index_bits {index_bits} must be below code_bits {code_bits}")
    if (1 << index_bits) > geometry.rows_per_chip:
        raise CapacityError(f"{1 << index_bits} buckets exceed {geometry.rows_per_chip} PIM rows")
    tag_bits = code_bits - index_bits
    if capacity is None:
        capacity = row_bits // (tag_bits + value_bits)
    if capacity < 1:
        raise ConfigError("a bucket row cannot hold a single entry")
    if capacity * (tag_bits + value_bits) > row_bits:
        raise ConfigError(f"{capacity} entries of {tag_bits + value_bits} bits overflow a {row_bits}-bit row")
    layout = HashLayout(code_bits, index_bits, value_bits, capacity)
    slots = layout.num_buckets * capacity
    codes = ((1 << tag_bits) - 1) << index_bits
    if n_keys > min(slots, codes):
        raise CapacityError(f"{n_keys} keys exceed table capacity of {min(slots, codes)} entries")
    return layout


class Dictionary:
    """Bijective value <-> code map with bucket-aware code assignment."""

    def __init__(self, layout: HashLayout):
        self.layout = layout
        self.code_of: Dict[Hashable, int] = {}
        self.value_of: Dict[int, Hashable] = {}
        self._sorted_vals: Optional[np.ndarray] = None
        self._sorted_codes: Optional[np.ndarray] = None

    @property
    def code_bits(self) -> int:
        return self.layout.code_bits

    @property
    def index_bits(self) -> int:
        return self.layout.index_bits

    def __len__(self):
        return len(self.code_of)

    def encode(self, value) -> Optional[int]:
        return self.code_of.get(value)

    def decode(self, code: int):
        return self.value_of[code]

    def encode_array(self, values) -> np.ndarray:
        """Vectorised encode of integer keys; unknown values map to the null code."""
        values = np.asarray(values, dtype=np.int64)
        if self._sorted_vals is None:
            items = sorted(self.code_of.items())
            self._sorted_vals = np.array([v for v, _ in items], dtype=np.int64)
            self._sorted_codes = np.array([c for _, c in items], dtype=np.int64)
        out = np.full(len(values), self.layout.null_code, dtype=np.int64)
        if len(self._sorted_vals) == 0 or len(values) == 0:
            return out
        pos = np.searchsorted(self._sorted_vals, values)
        pos = np.minimum(pos, len(self._sorted_vals) - 1)
        found = self._sorted_vals[pos] == values
        out[found] = self._sorted_codes[pos[found]]
        return out

    def bucket_occupancy(self) -> np.ndarray:
        occ = np.zeros(self.layout.num_buckets, dtype=np.int64)
        for c in self.value_of:
            occ[bucket_of(c, self.index_bits)] += 1
        return occ


def build_dictionary(dim_keys: Iterable, geometry: MemoryGeometry, *, code_bits: Optional[int] = None,
                     value_bits: int = DEFAULT_VALUE_BITS, index_bits: Optional[int] = None,
                     capacity: Optional[int] = None, headroom: float = DEFAULT_HEADROOM,
                     natural: Optional[Callable[[Hashable, int], int]] = None) -> Dictionary:
    """Assign fixed-width codes so that no bucket exceeds its capacity.

    Distinct keys are taken in first-appearance order. A key's preferred
    code is its insertion rank (or ``natural(key, rank)``); if that code
    is taken, reserved, or lands in a full bucket, the following codes are
    tried in turn, which walks the key across neighbouring buckets.
    """
    distinct = list(dict.fromkeys(dim_keys))
    layout = plan_layout(len(distinct), geometry, code_bits=code_bits, value_bits=value_bits,
                         index_bits=index_bits, capacity=capacity, headroom=headroom)
    d = Dictionary(layout)
    space = 1 << layout.code_bits
    mask = layout.num_buckets - 1
    occ = [0] * layout.num_buckets
    for rank, key in enumerate(distinct):
        start = natural(key, rank) if natural is not None else rank
        if not 0 <= start < space:
            raise CapacityError(f"preferred code {start} outside the {layout.code_bits}-bit code space")
        c = start
        for _ in range(space):
            if c not in d.value_of and not layout.is_reserved(c) and occ[c & mask] < layout.capacity:
                break
            c = (c + 1) % space
        else:
            raise CapacityError("no free code with an under-full bucket")
        d.code_of[key] = c
        d.value_of[c] = key
        occ[c & mask] += 1
    return d


@dataclass
class DuplicationList:
    """Host-resident lists of dimension row indices for repeated keys.

    Handles are dense list indices.
    """

    lists: List[List[int]] = field(default_factory=list)

    def __len__(self):
        return len(self.lists)

    def __getitem__(self, handle: int) -> List[int]:
        return self.lists[handle]

    def total_indices(self) -> int:
        return sum(len(l) for l in self.lists)


class PimHashTable:
    """Unique-key hash table, one BucketRow per bucket id."""

    def __init__(self, layout: HashLayout):
        self.layout = layout
        self.fmt = layout.fmt
        self.buckets: Dict[int, BucketRow] = {}

    @property
    def index_bits(self) -> int:
        return self.layout.index_bits

    @property
    def tag_bits(self) -> int:
        return self.layout.tag_bits

    @property
    def value_bits(self) -> int:
        return self.layout.value_bits

    @property
    def capacity(self) -> int:
        return self.layout.capacity

    def split(self, code: int) -> Tuple[int, int]:
        ib = self.layout.index_bits
        return code & ((1 << ib) - 1), code >> ib

    def row(self, bucket: int) -> BucketRow:
        r = self.buckets.get(bucket)
        if r is None:
            if not 0 <= bucket < self.layout.num_buckets:
                raise InvariantError(f"bucket {bucket} outside table of {self.layout.num_buckets}")
            r = self.buckets[bucket] = BucketRow(bucket, self.layout.capacity, self.fmt)
        return r

    def insert(self, code: int, value: int, dup_flag: int = 0) -> None:
        bucket, tag = self.split(code)
        self.row(bucket).insert(BucketEntry(tag, value, dup_flag))

    def items(self):
        """Yield (code, value, dup_flag) for every stored entry."""
        ib = self.layout.index_bits
        for bucket in sorted(self.buckets):
            for _, e in self.buckets[bucket].entries():
                yield (e.tag << ib) | bucket, e.value, e.dup_flag

    def lookup_host(self, code: int) -> Optional[Tuple[int, int]]:
        bucket, tag = self.split(code)
        row = self.buckets.get(bucket)
        if row is None:
            return None
        hit = np.flatnonzero(row.tags == tag) if tag != self.fmt.sentinel else ()
        if len(hit) == 0:
            return None
        return int(row.values[hit[0]]), int(row.flags[hit[0]])

    def non_empty_buckets(self) -> List[int]:
        return sorted(b for b, r in self.buckets.items() if r.occupancy > 0)

    def __len__(self):
        return sum(r.occupancy for r in self.buckets.values())


def build_hash_structures(dim_table: Iterable[Tuple[Hashable, int]],
                          dictionary: Dictionary) -> Tuple[PimHashTable, DuplicationList]:
    """Duplication-list construction.

    First occurrence of a key is stored inline. On the second occurrence
    the inline row index moves to the head of a fresh list, the table
    entry becomes a flagged handle to it, and every later occurrence is
    appended.
    """
    layout = dictionary.layout
    limit = 1 << layout.fmt.payload_bits
    inline: Dict[int, List[int]] = {}  # code -> [value, flag], insertion ordered
    dup = DuplicationList()
    for key, idx in dim_table:
        code = dictionary.encode(key)
        if code is None:
            raise InvariantError(f"key {key!r} is not in the dictionary")
        slot = inline.get(code)
        if slot is None:
            if not 0 <= idx < limit:
                raise InvariantError(f"row index {idx} does not fit {layout.fmt.payload_bits} value bits")
            inline[code] = [idx, 0]
            continue
        if slot[1] == 0:
            handle = len(dup.lists)
            if handle >= limit:
                raise InvariantError("duplication handle space exhausted")
            dup.lists.append([slot[0]])
            slot[0], slot[1] = handle, 1
        dup.lists[slot[0]].append(idx)
    table = PimHashTable(layout)
    for code, (value, flag) in inline.items():
        table.insert(code, value, flag)
    return table, dup


# invariant checks -----------------------------------------------------------

def check_unique_keys(table: PimHashTable) -> None:
    seen = set()
    for code, _, _ in table.items():
        if code in seen:
            raise InvariantError(f"code {code} stored twice")
        seen.add(code)
    for b, row in table.buckets.items():
        occupied = row.tags[row.tags != row.fmt.sentinel]
        if len(set(occupied.tolist())) != len(occupied):
            raise InvariantError(f"bucket {b} holds duplicate tags")
        if len(occupied) != row.occupancy:
            raise InvariantError(f"bucket {b} occupancy counter is stale")


def check_index_consistency(table: PimHashTable, dictionary: Dictionary) -> None:
    ib = table.index_bits
    for bucket, row in table.buckets.items():
        for _, e in row.entries():
            code = (e.tag << ib) | bucket
            if bucket_of(code, ib) != bucket:
                raise InvariantError(f"code {code} found outside its bucket {bucket}")
            if code not in dictionary.value_of:
                raise InvariantError(f"stored code {code} unknown to the dictionary")


def check_dictionary(dictionary: Dictionary) -> None:
    layout = dictionary.layout
    if len(dictionary.code_of) != len(dictionary.value_of):
        raise InvariantError("dictionary maps are not bijective")
    for v, c in dictionary.code_of.items():
        if dictionary.value_of.get(c) != v:
            raise InvariantError(f"round trip failed for {v!r}")
        if not 0 <= c < (1 << layout.code_bits) or layout.is_reserved(c):
            raise InvariantError(f"code {c} is outside the usable code space")
    if dictionary.bucket_occupancy().max(initial=0) > layout.capacity:
        raise InvariantError("a bucket exceeds its capacity")


def check_duplication_list(table: PimHashTable, dup: DuplicationList) -> None:
    refs = [0] * len(dup)
    for _, value, flag in table.items():
        if flag:
            if not 0 <= value < len(dup):
                raise InvariantError(f"dangling duplication handle {value}")
            refs[value] += 1
    for h, (n, lst) in enumerate(zip(refs, dup.lists)):
        if n != 1:
            raise InvariantError(f"handle {h} referenced {n} times")
        if len(lst) < 2:
            raise InvariantError(f"duplication list {h} has fewer than two entries")


def expand(table: PimHashTable, dup: DuplicationList, dictionary: Dictionary) -> Dict[Hashable, List[int]]:
    """Rebuild the key -> row-index multimap from the stored structures."""
    out = {}
    for code, value, flag in table.items():
        out[dictionary.decode(code)] = list(dup[value]) if flag else [value]
    return out


def check_structures(table: PimHashTable, dup: DuplicationList, dictionary: Dictionary,
                     dim_table: Optional[Sequence[Tuple[Hashable, int]]] = None) -> None:
    check_dictionary(dictionary)
    check_unique_keys(table)
    check_index_consistency(table, dictionary)
    check_duplication_list(table, dup)
    if dim_table is not None:
        oracle: Dict[Hashable, List[int]] = {}
        for k, i in dim_table:
            oracle.setdefault(k, []).append(i)
        if expand(table, dup, dictionary) != oracle:
            raise InvariantError("table plus duplication list does not reproduce the dimension multimap")
