import math

import pytest
from hypothesis import given, strategies as st

from pimjoin.errors import CapacityError, ConfigError
from pimjoin.memory import (COLD, CONFLICT, HIT, BankState, Location, MemoryGeometry, TimingParams,
                            access_row, address_to_location, burst_transfer_cycles, location_to_address,
                            location_to_bucket, map_bucket_to_location, rank_coordinates, rank_id_of,
                            row_access_cost)


def test_default_geometry_shape(geometry):
    assert geometry.total_ranks == 16
    assert geometry.regular_chips == 15
    assert geometry.row_buffer_bits == 8192
    assert geometry.rows_per_chip == 16 * 65536
    assert geometry.row_span_bytes == 16 * 1024


def test_geometry_rejects_bad_fields():
    with pytest.raises(ConfigError):
        MemoryGeometry(banks_per_chip=0)
    with pytest.raises(ConfigError):
        MemoryGeometry(pim_chips_per_rank=2)
    with pytest.raises(ConfigError):
        MemoryGeometry(chips_per_rank=1)


@pytest.mark.parametrize("t_cmp", [-1, 5])
def test_tcmp_range(t_cmp):
    with pytest.raises(ConfigError):
        TimingParams(t_CMP=t_cmp)


def test_bucket_mapping_injective_and_invertible(geometry):
    seen = set()
    for b in range(1024):
        loc = map_bucket_to_location(b, geometry)
        loc.validate(geometry)
        key = (loc.bank, loc.subarray, loc.row)
        assert key not in seen
        seen.add(key)
        assert location_to_bucket(loc, geometry) == b
    # consecutive buckets stripe across banks first
    assert [map_bucket_to_location(b, geometry).bank for b in range(16)] == list(range(16))
    assert map_bucket_to_location(16, geometry).subarray == 1


def test_bucket_beyond_chip_names_limit(small_geometry):
    with pytest.raises(CapacityError, match=str(small_geometry.rows_per_chip)):
        map_bucket_to_location(small_geometry.rows_per_chip, small_geometry)


def test_rank_ids_vary_channel_fastest(geometry):
    assert rank_coordinates(0, geometry) == (0, 0, 0)
    assert rank_coordinates(1, geometry) == (1, 0, 0)
    assert rank_coordinates(8, geometry) == (0, 1, 0)
    for r in range(geometry.total_ranks):
        loc = map_bucket_to_location(0, geometry, r)
        assert rank_id_of(loc, geometry) == r


def test_hand_computed_addresses(geometry):
    # bucket 17 on rank 1's PIM chip: channel 1, bank 1, subarray 1, row 0
    assert location_to_address(map_bucket_to_location(17, geometry, 1, True), geometry) == 86981476352
    # row 2049 on rank 9's regular chips: channel 1, dimm 1, bank 1, subarray 0, row 1
    assert location_to_address(map_bucket_to_location(2049, geometry, 9, False), geometry) == 104152973312


@given(st.integers(0, 15), st.integers(0, 16 * 65536 - 1), st.booleans(), st.integers(0, 16383))
def test_address_round_trip(rank, bucket, pim, offset):
    g = MemoryGeometry()
    base = map_bucket_to_location(bucket, g, rank, pim)
    loc = Location(base.channel, base.dimm, base.rank, base.bank, base.subarray, base.row, offset, pim)
    assert address_to_location(location_to_address(loc, g), g) == loc


def test_row_access_costs(timing):
    assert row_access_cost(HIT, timing) == 22
    assert row_access_cost(COLD, timing) == 44
    assert row_access_cost(CONFLICT, timing) == 66


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 2), st.integers(0, 3), st.booleans()),
                max_size=200))
def test_access_row_against_open_row_oracle(accesses):
    g, t = MemoryGeometry(), TimingParams()
    state = BankState()
    open_rows = {}
    total = 0
    for bank, sub, row, pim in accesses:
        loc = Location(0, 0, 0, bank, sub, row, 0, pim)
        key = (bank, sub, pim)
        if key not in open_rows:
            expected = t.t_RCD + t.t_CAS
        elif open_rows[key] == row:
            expected = t.t_CAS
        else:
            expected = t.t_RP + t.t_RCD + t.t_CAS
        open_rows[key] = row
        assert access_row(state, loc, t) == expected
        total += expected
    assert state.cycle_now == total
    assert state.hits + state.cold + state.conflicts == len(accesses)


def test_pim_and_regular_chips_keep_separate_rows(timing):
    state = BankState()
    access_row(state, Location(0, 0, 0, 0, 0, 3, 0, False), timing)
    assert access_row(state, Location(0, 0, 0, 0, 0, 5, 0, True), timing) == 44
    assert access_row(state, Location(0, 0, 0, 0, 0, 3, 0, False), timing) == 22


def _burst_oracle(words, word_bits, chip_bits, cycles):
    """Fill bursts one word at a time."""
    bursts, used = 0, chip_bits
    for _ in range(words):
        need = word_bits
        if used + need > chip_bits:
            bursts += math.ceil(need / chip_bits)
            used = need if need <= chip_bits else chip_bits
        else:
            used += need
    return bursts * cycles


def test_burst_transfer_matches_accumulation(rng, geometry):
    t = TimingParams(host_transfer_cycles=3)
    for _ in range(10_000):
        words = int(rng.integers(0, 400))
        word_bits = int(rng.choice([1, 7, 8, 16, 24, 32, 40, 64, 100, 130]))
        chips = int(rng.integers(1, 16))
        expected = _burst_oracle(words, word_bits, geometry.bits_per_burst(chips), 7)
        assert burst_transfer_cycles(words, geometry, t, word_bits, chips) == expected


def test_burst_rejects_bad_word(geometry, timing):
    with pytest.raises(ConfigError):
        burst_transfer_cycles(3, geometry, timing, 0)
    with pytest.raises(ValueError):
        burst_transfer_cycles(-1, geometry, timing)


def test_geometry_fingerprint_tracks_fields():
    assert MemoryGeometry().fingerprint() == MemoryGeometry().fingerprint()
    assert MemoryGeometry().fingerprint() != MemoryGeometry(channels=4).fingerprint()
