import numpy as np
import pytest
from hypothesis import given, strategies as st

from pimjoin.errors import ConfigError, RejectedCommandError, StateError
from pimjoin.memory import TimingParams
from pimjoin.query import build_join, join
from pimjoin.rlu import (COMMAND_ADDRESS, Mode, Opcode, Rlu, RluConfig, channel_bus_finish,
                         compute_stall_N, double_buffer_total, keys_per_fetch_burst, run_double_buffered,
                         run_join_stream)


def test_stall_threshold_example(geometry):
    # 64-entry buffer, one burst brings (16-1)*8*8/32 = 30 keys
    assert keys_per_fetch_burst(geometry, 32) == 30
    assert compute_stall_N(RluConfig(key_buffer_capacity=64), geometry, 32) == 34
    assert compute_stall_N(RluConfig(), geometry, 32) == 34


def test_stall_threshold_rejects_tiny_buffer(geometry):
    with pytest.raises(ConfigError):
        compute_stall_N(RluConfig(key_buffer_capacity=16), geometry, 32)
    with pytest.raises(ConfigError):
        RluConfig(key_buffer_capacity=4)


def test_default_buffer_scales_with_key_width(geometry):
    cfg = RluConfig()
    assert cfg.buffer_capacity(32) == 64
    assert cfg.buffer_capacity(8) == 256
    assert compute_stall_N(cfg, geometry, 8) == 256 - 120


def test_mode_state_machine():
    rlu = Rlu()
    assert rlu.mode is Mode.PIM
    assert rlu.write(COMMAND_ADDRESS, Opcode.PIM_OFF) is Mode.DRAM
    with pytest.raises(StateError):
        rlu.set_mode(Opcode.JOIN)
    with pytest.raises(RejectedCommandError):
        rlu.set_mode(99)
    # ordinary writes leave the mode alone
    assert rlu.write(0x1000, Opcode.PIM_START) is Mode.DRAM
    assert rlu.write(COMMAND_ADDRESS, Opcode.PIM_START) is Mode.PIM
    assert rlu.set_mode(Opcode.JOIN) is Mode.PIM
    assert rlu.config.mode is Mode.PIM


def test_stream_requires_pim_mode(geometry, timing):
    state, _ = build_join([1, 2], [1, 2], geometry, timing, ranks=[0])
    with pytest.raises(StateError):
        run_join_stream(state.fact_codes, state, RluConfig(mode=Mode.DRAM))


def _event_simulation(loads, probes):
    """Two fact buffers: a load needs its buffer free, a probe needs its data
    loaded and the previous probe finished."""
    load_end, probe_end = [], []
    for i, (ld, pr) in enumerate(zip(loads, probes)):
        buffer_free = probe_end[i - 2] if i >= 2 else 0
        # loads share the single write path
        start = max(load_end[-1] if load_end else 0, buffer_free)
        load_end.append(start + ld)
        probe_end.append(max(load_end[i], probe_end[i - 1] if i else 0) + pr)
    return probe_end[-1]


@given(st.lists(st.tuples(st.integers(1, 500), st.integers(1, 500)), min_size=1, max_size=20))
def test_double_buffer_formula_matches_event_simulation(pairs):
    loads = [a for a, _ in pairs]
    probes = [b for _, b in pairs]
    assert double_buffer_total(loads, probes) == _event_simulation(loads, probes)


def test_double_buffered_run(geometry, timing, rng):
    dim = np.arange(200)
    state, _ = build_join(dim, rng.choice(dim, 3000), geometry, timing, ranks=[0])
    parts = [state.fact_codes[i:i + 1000] for i in range(0, 3000, 1000)]
    rep = run_double_buffered(parts, state)
    assert len(rep.loads) == len(rep.probes) == 3
    assert rep.total_cycles == double_buffer_total(rep.loads, rep.probes)
    assert rep.total_cycles >= sum(rep.probes)


def test_oversized_fact_column_is_partitioned(small_geometry, timing, rng):
    dim = np.arange(20)
    fact = rng.choice(dim, 5000)
    state, setup = build_join(dim, fact, small_geometry, timing, ranks=[0, 1])
    assert len(fact) > state.fact_capacity_per_rank * 2
    result, lat = join(state)
    assert len(result) == 5000
    assert len(lat.loads) == len(lat.probes) > 1
    assert lat.total_cycles == double_buffer_total(lat.loads, lat.probes)


def test_cpu_filter_keeps_results(geometry, timing, rng):
    dim = np.arange(30)
    fact = np.repeat(rng.choice(dim, 400), rng.integers(1, 4, 400))
    state, _ = build_join(dim, fact, geometry, timing, ranks=[0, 1])
    plain, t_plain = run_join_stream(state.fact_codes, state)
    filt, t_filt = run_join_stream(state.fact_codes, state, RluConfig(cpu_filter=True))
    assert plain == filt
    assert t_filt.host_filtered > 0
    # the host pass and the RLU window compound, so probes can only drop
    assert t_filt.probes_issued <= t_plain.probes_issued
    assert t_filt.key_fetch_bursts < t_plain.key_fetch_bursts


def test_results_independent_of_timing(geometry, rng):
    dim = rng.integers(0, 400, 600)
    fact = rng.integers(0, 500, 5000)
    out = []
    for t in (TimingParams(), TimingParams(t_CMP=4, t_RCD=30, burst_cycles=8)):
        state, _ = build_join(dim, fact, geometry, t, ranks=[0, 5])
        out.append(join(state)[0].pairs())
    assert out[0] == out[1]


def test_more_ranks_fewer_cycles_but_sublinear(geometry, timing, rng):
    dim = np.arange(3000)
    fact = rng.choice(dim, 40_000)
    cycles = {}
    for n in (1, 2, 4):
        state, _ = build_join(dim, fact, geometry, timing, ranks=list(range(n)))
        cycles[n] = join(state)[1].total_cycles
    assert cycles[1] > cycles[2] > cycles[4]
    assert cycles[2] > cycles[1] / 2 and cycles[4] > cycles[1] / 4


def test_channel_bus_serialises_shared_channel(geometry):
    # ranks 0 and 8 share channel 0; rank 1 sits alone on channel 1
    last, spans = channel_bus_finish({0: [10, 10], 8: [10], 1: [10]}, geometry, 4)
    assert spans[0] == [(10, 14), (14, 18)]
    assert spans[8] == [(18, 22)]
    assert last == {0: 18, 8: 22, 1: 14}


def test_stage_busy_accounting(geometry, timing):
    dim = np.arange(10)
    state, _ = build_join(dim, np.resize(dim, 95), geometry, timing, ranks=[0], code_bits=32)
    _, tr = run_join_stream(state.fact_codes, state, record=True)
    busy = tr.stage_busy[0]
    assert busy["S2"] == tr.key_fetch_bursts == 4
    assert busy["S4"] == 4 * tr.probes_issued
    assert {s for s, *_ in tr.timeline} == {"S1", "S2", "S3", "S4"}
