import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pimjoin.errors import CapacityError, ConfigError, InvariantError
from pimjoin.memory import MemoryGeometry
from pimjoin.search import BucketEntry
from pimjoin.structures import (build_dictionary, build_hash_structures, check_dictionary,
                                check_duplication_list, check_index_consistency, check_structures,
                                check_unique_keys, expand, plan_layout)


def test_compact_layout_for_small_tables(geometry):
    layout = plan_layout(3000, geometry)
    # 12 bits of code for 3000 keys, with one spare bit of code space
    assert layout.code_bits == 13
    assert layout.capacity == geometry.row_buffer_bits // (layout.tag_bits + layout.value_bits)
    assert layout.num_buckets * layout.capacity >= 3000 * 1.25


def test_layout_index_bits_follow_needed_rows(geometry):
    layout = plan_layout(10_000, geometry, code_bits=32)
    est = geometry.row_buffer_bits // 64
    assert layout.index_bits == math.ceil(math.log2(math.ceil(10_000 * 1.25 / est)))


def test_layout_errors(geometry, small_geometry):
    with pytest.raises(ConfigError):
        plan_layout(10, geometry, value_bits=1)
    with pytest.raises(ConfigError):
        plan_layout(10, geometry, code_bits=8, index_bits=8)
    with pytest.raises(CapacityError):
        plan_layout(10 ** 6, small_geometry, code_bits=32)


def test_dictionary_sequential_codes(geometry):
    d = build_dictionary(["x", "y", "x", "z"], geometry)
    assert [d.encode(v) for v in "xyz"] == [0, 1, 2]
    assert d.decode(1) == "y"
    assert d.encode("w") is None


def test_dictionary_overflow_moves_to_next_code(geometry):
    # preferred codes 0, 2, 4 all land in bucket 0 of a 2-bucket, 2-slot table
    d = build_dictionary(["a", "b", "c"], geometry, code_bits=4, index_bits=1, capacity=2,
                         natural=lambda key, rank: 2 * rank)
    assert [d.encode(k) for k in "abc"] == [0, 2, 5]
    assert d.bucket_occupancy().tolist() == [2, 1]


def test_dictionary_skips_reserved_tag(geometry):
    # with 2-bit codes and no index bits, code 3 is the all-ones tag
    d = build_dictionary([10, 20, 30], geometry, code_bits=2, index_bits=0, capacity=3)
    assert sorted(d.value_of) == [0, 1, 2]
    with pytest.raises(CapacityError):
        build_dictionary([1, 2, 3, 4], geometry, code_bits=2, index_bits=0, capacity=4)


@given(st.lists(st.integers(-10 ** 6, 10 ** 6), max_size=300), st.integers(0, 2 ** 16))
def test_dictionary_properties(values, salt):
    g = MemoryGeometry()
    natural = (lambda k, r: (k * 2654435761 + salt) % 4096)
    d = build_dictionary(values, g, code_bits=12, index_bits=3, capacity=40, natural=natural)
    check_dictionary(d)
    assert len(d) == len(set(values))
    assert all(d.decode(d.encode(v)) == v for v in values)
    assert d.bucket_occupancy().max(initial=0) <= 40
    enc = d.encode_array(np.array(values + [10 ** 7], dtype=np.int64))
    assert enc[-1] == d.layout.null_code
    assert enc[:-1].tolist() == [d.encode(v) for v in values]


def test_bucket_histogram_of_random_codes(geometry, rng):
    n, buckets = 5000, 64
    salt = rng.integers(0, 2 ** 32, size=n)
    d = build_dictionary(range(n), geometry, code_bits=24, index_bits=6, capacity=160,
                         natural=lambda k, r: int(salt[r]) % (1 << 24))
    occ = d.bucket_occupancy()
    p = 1 / buckets
    sigma = math.sqrt(n * p * (1 - p))
    assert np.all(np.abs(occ - n * p) <= 4 * sigma)


def test_duplication_list_hand_trace(geometry):
    dim = [("A", 0), ("B", 1), ("A", 2), ("C", 3), ("A", 4), ("B", 5)]
    d = build_dictionary([k for k, _ in dim], geometry)
    table, dup = build_hash_structures(dim, d)
    assert table.lookup_host(d.encode("A")) == (0, 1)
    assert table.lookup_host(d.encode("B")) == (1, 1)
    assert table.lookup_host(d.encode("C")) == (3, 0)
    assert dup.lists == [[0, 2, 4], [1, 5]]
    assert dup.total_indices() == 5
    check_structures(table, dup, d, dim)


@given(st.lists(st.integers(0, 60), max_size=250))
def test_structures_reproduce_multimap(keys):
    dim = list(zip(keys, range(len(keys))))
    d = build_dictionary(keys, MemoryGeometry())
    table, dup = build_hash_structures(dim, d)
    check_structures(table, dup, d, dim)
    oracle = {}
    for k, i in dim:
        oracle.setdefault(k, []).append(i)
    assert expand(table, dup, d) == oracle
    assert len(table) == len(oracle)


def test_checks_detect_violations(geometry):
    dim = [(k, i) for i, k in enumerate([5, 6, 7, 5])]
    d = build_dictionary([k for k, _ in dim], geometry)
    table, dup = build_hash_structures(dim, d)
    check_structures(table, dup, d, dim)

    bucket, tag = table.split(d.encode(6))
    row = table.buckets[bucket]
    row.tags[np.flatnonzero(row.tags == row.fmt.sentinel)[0]] = tag
    with pytest.raises(InvariantError):
        check_unique_keys(table)

    table, dup = build_hash_structures(dim, d)
    table.row(0).write_slot(table.capacity - 1, BucketEntry(table.fmt.sentinel - 1, 0))
    with pytest.raises(InvariantError):
        check_index_consistency(table, d)

    table, dup = build_hash_structures(dim, d)
    dup.lists.append([1, 2])
    with pytest.raises(InvariantError):
        check_duplication_list(table, dup)

    table, dup = build_hash_structures(dim, d)
    with pytest.raises(InvariantError):
        check_structures(table, dup, d, dim[:-1])


def test_unknown_key_rejected(geometry):
    d = build_dictionary([1, 2], geometry)
    with pytest.raises(InvariantError):
        build_hash_structures([(3, 0)], d)
