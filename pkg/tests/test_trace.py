import io

import numpy as np

from pimjoin.memory import MemoryGeometry, TimingParams
from pimjoin.query import build_join, join
from pimjoin.rlu import PipelineTrace
from pimjoin.trace import HEADER_PREFIX, export_trace, read_trace, replay_file, replay_trace

G = MemoryGeometry()
T = TimingParams()


def test_single_probe_cold_records():
    state, _ = build_join([42], [42], G, T, ranks=[1])
    _, lat = join(state, tracing=True)
    buf = io.StringIO()
    assert export_trace(lat.trace, G, T, buf) == 2
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith(HEADER_PREFIX)
    # rank 1 = channel 1; fact row 0 on the regular chips, bucket 0 on the PIM chip
    fact_addr = 1 * 2 * 2 * 16 * 128 * 512 * 16384
    pim_addr = fact_addr + 16 * 128 * 512 * 16384
    assert lines[1] == f"0x{fact_addr:x} READ 0"
    # the probe starts after the cold fetch (44 + 4) and the buffer copy
    assert lines[2] == f"0x{pim_addr:x} READ 49"
    assert lat.total_cycles == 49 + 48 + 4


def test_empty_run_has_header_only():
    buf = io.StringIO()
    assert export_trace(PipelineTrace(), G, T, buf) == 0
    meta, records = read_trace(io.StringIO(buf.getvalue()))
    assert records == [] and meta["geometry"] == G.fingerprint()
    assert replay_trace(records, G, T) == 0


def test_replay_reproduces_total(rng, tmp_path):
    dim = np.arange(800)
    fact = np.repeat(rng.choice(dim, 3000), rng.integers(1, 3, 3000))
    for ranks, t in (([0], T), ([0, 8, 1], T.with_tcmp(4)), (None, TimingParams(t_RP=30, t_CMP=2))):
        state, _ = build_join(dim, fact, G, t, ranks=ranks)
        _, lat = join(state, tracing=True)
        path = tmp_path / "run.trace"
        with open(path, "w") as f:
            export_trace(lat.trace, G, t, f)
        assert replay_file(str(path), G, t) == lat.total_cycles
