import math

import numpy as np

from pimjoin.memory import MemoryGeometry
from pimjoin.overhead import compute_data_overhead, structure_bytes
from pimjoin.structures import build_dictionary, build_hash_structures
from pimjoin.workload import WorkloadSpec, generate, raw_dataset_bytes


def test_parts_add_up():
    wl = generate(WorkloadSpec("ssb_like", scale_factor=0.01, seed=0))
    rep = compute_data_overhead(wl)
    assert set(rep.joins) == {"customer", "part", "supplier", "date"}
    assert rep.aux_bytes == sum(j.fact_copy + j.dictionary + j.hash_table + j.duplication_list
                                for j in rep.joins.values())
    assert rep.raw_bytes == raw_dataset_bytes(wl.spec)
    assert rep.ratio == rep.aux_bytes / rep.raw_bytes
    assert 0.04 <= rep.ratio <= 0.10


def test_structure_bytes_by_hand():
    g = MemoryGeometry()
    keys = [4, 4, 9, 13, 4]
    d = build_dictionary(keys, g)  # 3 distinct keys -> 3-bit codes
    table, dup = build_hash_structures(list(zip(keys, range(5))), d)
    ov = structure_bytes(1000, d, table, dup)
    assert d.code_bits == 3
    assert ov.fact_copy == math.ceil(1000 * 3 / 8)
    assert ov.dictionary == 3 * (4 + 1)
    assert ov.hash_table == math.ceil(3 * (table.tag_bits + 32) / 8)
    assert ov.duplication_list == (3 + 1) * 4


def test_synthetic_overhead():
    wl = generate(WorkloadSpec("synthetic_pair", size_r=1000, multiplier=4, zipf_s=1.5, key_bits=32, seed=0))
    rep = compute_data_overhead(wl, code_bits=32)
    j = rep.joins["R"]
    assert j.fact_copy == 4000 * 4
    assert rep.raw_bytes == 5000 * 8
    assert np.isclose(rep.ratio, rep.aux_bytes / rep.raw_bytes)
