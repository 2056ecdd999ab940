"""
PIM-resident layout of one join: hash bucket rows on the PIM chip of each
participating rank, the encoded fact-key column stored contiguously on the
regular chips, and the versioned binary dump of all of it.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CapacityError, ConfigError, StateError
from .memory import (BankState, Location, MemoryGeometry, TimingParams, access_row,
                     burst_transfer_cycles, map_bucket_to_location)
from .search import BucketRow
from .structures import Dictionary, DuplicationList, HashLayout, PimHashTable


def split_evenly(n: int, parts: int) -> List[Tuple[int, int]]:
    """Contiguous near-equal chunks, the first n % parts one longer."""
    base, extra = divmod(n, parts)
    out, start = [], 0
    for i in range(parts):
        end = start + base + (1 if i < extra else 0)
        out.append((start, end))
        start = end
    return out


@dataclass
class PimState:
    geometry: MemoryGeometry
    timing: TimingParams
    dictionary: Dictionary
    table: PimHashTable
    dup: DuplicationList
    ranks: List[int]
    fact_codes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    populated: bool = False
    population_cycles: int = 0
    _loc_cache: Dict[Tuple[int, int, bool], Location] = field(default_factory=dict, repr=False)

    @property
    def key_bits(self) -> int:
        """Stored width of one encoded fact key."""
        return self.dictionary.code_bits

    @property
    def keys_per_row(self) -> int:
        return self.geometry.regular_chips * self.geometry.row_buffer_bits // self.key_bits

    @property
    def fact_capacity_per_rank(self) -> int:
        return self.keys_per_row * self.geometry.rows_per_chip

    def rank_slices(self, n: Optional[int] = None) -> List[Tuple[int, int]]:
        return split_evenly(len(self.fact_codes) if n is None else n, len(self.ranks))

    def bucket_location(self, bucket: int, rank_id: int) -> Location:
        key = (rank_id, bucket, True)
        loc = self._loc_cache.get(key)
        if loc is None:
            loc = self._loc_cache[key] = map_bucket_to_location(bucket, self.geometry, rank_id, pim=True)
        return loc

    def fact_row_location(self, row: int, rank_id: int) -> Location:
        key = (rank_id, row, False)
        loc = self._loc_cache.get(key)
        if loc is None:
            if row >= self.geometry.rows_per_chip:
                raise CapacityError(f"fact row {row} beyond {self.geometry.rows_per_chip} rows per chip")
            loc = self._loc_cache[key] = map_bucket_to_location(row, self.geometry, rank_id, pim=False)
        return loc

    def fact_location(self, pos: int, rank_id: int) -> Location:
        """Location of the fact key at rank-local position `pos`."""
        row, col = divmod(pos, self.keys_per_row)
        base = self.fact_row_location(row, rank_id)
        return Location(base.channel, base.dimm, base.rank, base.bank, base.subarray, base.row,
                        col * self.key_bits // 8, False)

    def require_populated(self) -> None:
        if not self.populated:
            raise StateError("PIM state is not populated")

    def check_fact_capacity(self, n: int) -> None:
        per_rank = max(e - s for s, e in split_evenly(n, len(self.ranks))) if n else 0
        if per_rank > self.fact_capacity_per_rank:
            raise CapacityError(
                f"{per_rank} fact keys per rank exceed capacity {self.fact_capacity_per_rank}; "
                "partition the fact column and use double buffering")


@dataclass(frozen=True)
class RowWrite:
    loc: Location
    words: int
    word_bits: int
    chips: int


def hash_row_writes(state: PimState) -> Iterator[RowWrite]:
    entry_bits = state.table.fmt.entry_bits
    for rank_id in state.ranks:
        for b in state.table.non_empty_buckets():
            yield RowWrite(state.bucket_location(b, rank_id), state.table.buckets[b].occupancy, entry_bits, 1)


def fact_row_writes(state: PimState, n_keys: int, start: int = 0) -> Iterator[RowWrite]:
    """Row writes for rank-local positions [start, start+n) on every rank's chunk."""
    for rank_id, (s, e) in zip(state.ranks, split_evenly(n_keys, len(state.ranks))):
        yield from fact_range_writes(state, rank_id, start, start + (e - s))


def fact_range_writes(state: PimState, rank_id: int, lo: int, hi: int) -> Iterator[RowWrite]:
    kpr = state.keys_per_row
    pos = lo
    while pos < hi:
        row = pos // kpr
        end = min(hi, (row + 1) * kpr)
        yield RowWrite(state.fact_location(pos, rank_id), end - pos, state.key_bits,
                       state.geometry.regular_chips)
        pos = end


def write_cost(writes: Iterator[RowWrite], geometry: MemoryGeometry, timing: TimingParams,
               bank: Optional[BankState] = None) -> int:
    bank = bank if bank is not None else BankState()
    total = 0
    for w in writes:
        total += access_row(bank, w.loc, timing)
        total += burst_transfer_cycles(w.words, geometry, timing, w.word_bits, w.chips)
    return total


def populate_pim(table: PimHashTable, dup: DuplicationList, fact_keys, dictionary: Dictionary,
                 geometry: MemoryGeometry, timing: TimingParams,
                 ranks: Optional[Sequence[int]] = None) -> Tuple[PimState, int]:
    """Place the hash table on every rank's PIM chip and the encoded fact column
    on the regular chips; cost is a sequential row-by-row burst write."""
    ranks = list(range(geometry.total_ranks)) if ranks is None else list(ranks)
    if not ranks:
        raise ConfigError("at least one rank is required")
    if len(set(ranks)) != len(ranks) or not all(0 <= r < geometry.total_ranks for r in ranks):
        raise ConfigError(f"invalid rank set {ranks}")
    state = PimState(geometry, timing, dictionary, table, dup, ranks)
    if len(table.non_empty_buckets()) and max(table.non_empty_buckets()) >= geometry.rows_per_chip:
        raise CapacityError("hash table does not fit the PIM chip")
    codes = dictionary.encode_array(np.asarray(fact_keys, dtype=np.int64))
    state.check_fact_capacity(len(codes))
    state.fact_codes = codes
    bank = BankState()
    cycles = write_cost(hash_row_writes(state), geometry, timing, bank)
    cycles += write_cost(fact_row_writes(state, len(codes)), geometry, timing, bank)
    state.populated = True
    state.population_cycles = cycles
    return state, cycles


def fact_load_cycles(state: PimState, n_keys: int) -> int:
    """Cost of (re)writing an `n_keys` fact partition into the regular chips."""
    state.check_fact_capacity(n_keys)
    return write_cost(fact_row_writes(state, n_keys), state.geometry, state.timing)


# binary dump ----------------------------------------------------------------

MAGIC = b"PIMJ"
DUMP_VERSION = 1
_HEADER = struct.Struct("<4sHH16s")
_SECTION = struct.Struct("<4sQQ")


def _dictionary_arrays(d: Dictionary) -> Tuple[np.ndarray, np.ndarray]:
    items = sorted(d.value_of.items())
    try:
        vals = np.array([int(v) for _, v in items], dtype=np.int64)
    except (TypeError, ValueError):
        raise ConfigError("binary dump supports integer key values only") from None
    return np.array([c for c, _ in items], dtype=np.int64), vals


def dump_state(state: PimState, fp) -> None:
    """Write the versioned dump: header, section table, then sections."""
    layout = state.table.layout
    meta = {
        "layout": {"code_bits": layout.code_bits, "index_bits": layout.index_bits,
                   "value_bits": layout.value_bits, "capacity": layout.capacity},
        "geometry": state.geometry.to_dict(),
        "timing": state.timing.to_dict(),
        "ranks": state.ranks,
        "population_cycles": state.population_cycles,
    }
    codes, vals = _dictionary_arrays(state.dictionary)
    row_bytes = state.geometry.row_buffer_bits // 8
    hash_buf = io.BytesIO()
    for b in state.table.non_empty_buckets():
        hash_buf.write(struct.pack("<I", b))
        hash_buf.write(state.table.buckets[b].to_bytes(state.geometry.row_buffer_bits))
    lens = np.array([len(l) for l in state.dup.lists], dtype=np.uint32)
    flat = np.array([i for l in state.dup.lists for i in l], dtype=np.int64)
    sections = [
        (b"META", json.dumps(meta, sort_keys=True).encode()),
        (b"DICT", struct.pack("<Q", len(codes)) + codes.tobytes() + vals.tobytes()),
        (b"HASH", struct.pack("<II", row_bytes, len(state.table.non_empty_buckets())) + hash_buf.getvalue()),
        (b"DUPL", struct.pack("<Q", len(lens)) + lens.tobytes() + flat.tobytes()),
        (b"FACT", np.asarray(state.fact_codes, dtype=np.int64).tobytes()),
    ]
    offset = _HEADER.size + _SECTION.size * len(sections)
    fp.write(_HEADER.pack(MAGIC, DUMP_VERSION, len(sections), state.geometry.fingerprint().encode()))
    for name, blob in sections:
        fp.write(_SECTION.pack(name, offset, len(blob)))
        offset += len(blob)
    for _, blob in sections:
        fp.write(blob)


def load_state(fp, geometry: Optional[MemoryGeometry] = None) -> PimState:
    data = fp.read()
    magic, version, n, ghash = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ConfigError("not a PIM structure dump")
    if version != DUMP_VERSION:
        raise ConfigError(f"unsupported dump version {version}")
    sec = {}
    for i in range(n):
        name, off, length = _SECTION.unpack_from(data, _HEADER.size + i * _SECTION.size)
        sec[name] = data[off:off + length]
    meta = json.loads(sec[b"META"])
    stored = MemoryGeometry(**meta["geometry"])
    if stored.fingerprint().encode() != ghash:
        raise ConfigError("dump header geometry hash does not match its metadata")
    if geometry is not None and geometry.fingerprint() != stored.fingerprint():
        raise ConfigError(f"geometry hash mismatch: dump {ghash.decode()} vs config {geometry.fingerprint()}")
    layout = HashLayout(**meta["layout"])

    blob = sec[b"DICT"]
    (count,) = struct.unpack_from("<Q", blob, 0)
    codes = np.frombuffer(blob, dtype=np.int64, count=count, offset=8)
    vals = np.frombuffer(blob, dtype=np.int64, count=count, offset=8 + 8 * count)
    d = Dictionary(layout)
    for c, v in zip(codes.tolist(), vals.tolist()):
        d.code_of[v] = c
        d.value_of[c] = v

    table = PimHashTable(layout)
    blob = sec[b"HASH"]
    row_bytes, nrows = struct.unpack_from("<II", blob, 0)
    pos = 8
    for _ in range(nrows):
        (b,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        table.buckets[b] = BucketRow.from_bytes(blob[pos:pos + row_bytes], b, layout.capacity, layout.fmt)
        pos += row_bytes

    blob = sec[b"DUPL"]
    (nl,) = struct.unpack_from("<Q", blob, 0)
    lens = np.frombuffer(blob, dtype=np.uint32, count=nl, offset=8)
    flat = np.frombuffer(blob, dtype=np.int64, offset=8 + 4 * nl).tolist()
    dup, p = DuplicationList(), 0
    for k in lens.tolist():
        dup.lists.append(flat[p:p + k])
        p += k

    state = PimState(stored, TimingParams(**meta["timing"]), d, table, dup, list(meta["ranks"]))
    state.fact_codes = np.frombuffer(sec[b"FACT"], dtype=np.int64).copy()
    state.population_cycles = meta["population_cycles"]
    state.populated = True
    return state
