"""Byte accounting of the auxiliary join structures against the raw dataset."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .memory import MemoryGeometry
from .structures import Dictionary, DuplicationList, PimHashTable, build_dictionary, build_hash_structures
from .workload import Workload, raw_dataset_bytes

INDEX_BYTES = 4  # one dimension row index or handle in the duplication list
RAW_VALUE_BYTES = 4  # dictionary side of a key: the original 32-bit value


@dataclass
class JoinOverhead:
    fact_copy: int
    dictionary: int
    hash_table: int
    duplication_list: int

    @property
    def total(self) -> int:
        return self.fact_copy + self.dictionary + self.hash_table + self.duplication_list

    def to_dict(self) -> dict:
        return {**self.__dict__, "total": self.total}


@dataclass
class OverheadReport:
    raw_bytes: int
    joins: Dict[str, JoinOverhead] = field(default_factory=dict)

    @property
    def aux_bytes(self) -> int:
        return sum(j.total for j in self.joins.values())

    @property
    def ratio(self) -> float:
        return self.aux_bytes / self.raw_bytes if self.raw_bytes else 0.0

    def to_dict(self) -> dict:
        return {"raw_bytes": self.raw_bytes, "aux_bytes": self.aux_bytes, "ratio": self.ratio,
                "joins": {k: v.to_dict() for k, v in sorted(self.joins.items())}}


def structure_bytes(n_fact: int, dictionary: Dictionary, table: PimHashTable,
                    dup: DuplicationList) -> JoinOverhead:
    """Bytes of one join's structures. The encoded fact column is bit-packed;
    the hash table is counted once even though each rank holds a replica."""
    code_bits = dictionary.code_bits
    return JoinOverhead(
        fact_copy=-(-n_fact * code_bits // 8),
        dictionary=len(dictionary) * (RAW_VALUE_BYTES + -(-code_bits // 8)),
        hash_table=-(-len(table) * table.fmt.entry_bits // 8),
        duplication_list=(dup.total_indices() + len(dup)) * INDEX_BYTES,
    )


def compute_data_overhead(workload: Workload, geometry: Optional[MemoryGeometry] = None,
                          code_bits: Optional[int] = None) -> OverheadReport:
    geometry = geometry or MemoryGeometry()
    report = OverheadReport(raw_dataset_bytes(workload.spec))
    for dim in workload.join_pairs():
        fact, keys = workload.join_inputs(dim)
        keys = np.asarray(keys).tolist()
        d = build_dictionary(keys, geometry, code_bits=code_bits)
        table, dup = build_hash_structures(zip(keys, range(len(keys))), d)
        report.joins[dim] = structure_bytes(len(fact), d, table, dup)
    return report
