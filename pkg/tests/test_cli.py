import csv
import io
import json

import pytest

from pimjoin.cli import main
from pimjoin.config import CONFIG_ENV, dump_config, parse_config, SimConfig
from pimjoin.errors import ConfigError
from pimjoin.memory import MemoryGeometry, TimingParams
from pimjoin.query import build_join
from pimjoin.state import dump_state

SMALL = ["--workload", "ssb", "--sf", "0.001", "--seed", "1"]


def _json(capsys):
    return json.loads(capsys.readouterr().out)


def test_config_dump_round_trip(capsys):
    assert main(["config", "dump"]) == 0
    text = capsys.readouterr().out
    assert "t_CAS = 22" in text and "key_buffer_capacity = auto" in text
    assert parse_config(text) == SimConfig()


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        parse_config("t_CAS = 22\nbogus = 1\n")
    with pytest.raises(ConfigError):
        parse_config("t_CAS = fast\n")
    cfg = parse_config("# comment\nt_CMP = 3  # trailing\ncpu_filter = 1\n")
    assert cfg.timing.t_CMP == 3 and cfg.rlu.cpu_filter
    assert parse_config(dump_config(cfg)) == cfg


def test_config_from_environment(tmp_path, monkeypatch, capsys):
    path = tmp_path / "sim.cfg"
    path.write_text("t_CMP = 4\n")
    monkeypatch.setenv(CONFIG_ENV, str(path))
    assert main(["config", "dump"]) == 0
    assert "t_CMP = 4" in capsys.readouterr().out
    monkeypatch.setenv(CONFIG_ENV, str(tmp_path / "missing.cfg"))
    assert main(["config", "dump"]) == 2


def test_gen_writes_tables(tmp_path, capsys):
    out = tmp_path / "wl"
    assert main(["gen", *SMALL, "--out", str(out)]) == 0
    info = _json(capsys)
    assert info["tables"]["lineorder"] == 6000
    assert (out / "lineorder.csv").exists() and (out / "workload.json").exists()
    assert main(["run", "--workload-dir", str(out), "--ranks", "2"]) == 0
    assert _json(capsys)["workload_hash"] == info["workload_hash"]


def test_run_report_is_byte_identical(tmp_path, capsys):
    outs = []
    for name in ("a.json", "b.json"):
        assert main(["run", *SMALL, "--ranks", "2", "--out", str(tmp_path / name)]) == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    report = json.loads(outs[0])
    assert report["result_rows"] == 6000 and report["total_cycles"] > 0
    assert "construction_seconds" not in json.dumps(report)


def test_run_other_queries(capsys, tmp_path):
    assert main(["run", *SMALL, "--ranks", "1", "--query", "select_distinct", "--dim", "part"]) == 0
    assert _json(capsys)["result_rows"] == 200
    assert main(["run", *SMALL, "--ranks", "1", "--query", "select_where", "--literal", "3",
                 "--dim", "customer"]) == 0
    assert _json(capsys)["result_rows"] == 1
    assert main(["run", *SMALL, "--query", "star_join"]) == 0
    assert _json(capsys)["matched_fact_rows"] == 6000
    csv_path = tmp_path / "rows.csv"
    assert main(["run", *SMALL, "--ranks", "1", "--output-csv", str(csv_path)]) == 0
    rows = list(csv.reader(open(csv_path)))
    assert rows[0] == ["key", "fact_index", "dim_index"] and len(rows) == 6001


def test_build_dump_then_run(tmp_path, capsys):
    dump = tmp_path / "s.bin"
    assert main(["build", *SMALL, "--ranks", "2", "--out", str(dump)]) == 0
    built = _json(capsys)
    assert "construction_seconds" not in built["setup"]
    assert main(["run", "--dump", str(dump)]) == 0
    from_dump = _json(capsys)
    assert main(["run", *SMALL, "--ranks", "2"]) == 0
    direct = _json(capsys)
    assert from_dump["total_cycles"] == direct["total_cycles"]
    assert from_dump["result_rows"] == direct["result_rows"]
    assert main(["build", *SMALL, "--ranks", "1", "--wall-clock"]) == 0
    assert "construction_seconds" in _json(capsys)["setup"]


def test_dump_geometry_mismatch_exits_2(tmp_path, capsys):
    dump = tmp_path / "s.bin"
    assert main(["build", *SMALL, "--ranks", "1", "--out", str(dump)]) == 0
    cfg = tmp_path / "other.cfg"
    cfg.write_text("rows_per_subarray = 256\n")
    assert main(["run", "--dump", str(dump), "--config", str(cfg)]) == 2
    assert "geometry hash mismatch" in capsys.readouterr().err


def test_corrupted_table_exits_3(tmp_path, capsys):
    state, _ = build_join([1, 2, 3], [1, 2, 3], MemoryGeometry(), TimingParams(), ranks=[0])
    bucket, _ = state.table.split(state.dictionary.encode(1))
    row = state.table.buckets[bucket]
    occupied = [i for i, _ in row.entries()]
    free = next(i for i in range(row.capacity) if i not in occupied)
    # a second copy of the same tag makes two comparators fire
    row.tags[free] = row.tags[occupied[0]]
    row.values[free] = 2
    dump = tmp_path / "bad.bin"
    with open(dump, "wb") as f:
        dump_state(state, f)
    assert main(["run", "--dump", str(dump)]) == 3


def test_capacity_error_exits_4(tmp_path, capsys):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text("banks_per_chip = 1\nsubarrays_per_bank = 1\nrows_per_subarray = 1\n")
    assert main(["run", *SMALL, "--config", str(cfg), "--dim", "part"]) == 4


def test_bad_arguments_exit_2(capsys):
    assert main(["run", *SMALL, "--ranks", "99"]) == 2
    assert main(["run", "--workload", "synthetic", "--size-r", "10", "--multiplier", "3"]) == 2
    assert main(["run", "--workload", "synthetic", "--size-r", "100", "--query", "star_join"]) == 2
    assert main(["run", "--dump", "/nonexistent/dump.bin"]) == 2
    with pytest.raises(SystemExit) as e:
        main(["run", "--query", "nope"])
    assert e.value.code == 2


def test_sweep_tcmp_grid(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", *SMALL, "--ranks", "1", "--tcmp", "0:4", "--jobs", "2", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [int(r["config.timing.t_CMP"]) for r in rows] == [0, 1, 2, 3, 4]
    cycles = [int(r["total_cycles"]) for r in rows]
    assert cycles == sorted(cycles)


def test_sweep_rank_scaling_is_sublinear(capsys):
    assert main(["sweep", "--workload", "ssb", "--sf", "0.01", "--ranks", "1,2"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    one, two = (int(r["total_cycles"]) for r in rows)
    assert one / 2 <= two < one


def test_compare_reports_speedup(capsys):
    assert main(["compare", *SMALL, "--ranks", "2", "--threads", "2"]) == 0
    rep = _json(capsys)
    assert rep["speedup"] == pytest.approx(rep["baseline_seconds"] / rep["modeled_seconds"])
    assert rep["baseline_threads"] == 2 and rep["caveat"]


def test_trace_subcommand(tmp_path, capsys):
    out = tmp_path / "t.trace"
    assert main(["trace", *SMALL, "--ranks", "2", "--out", str(out)]) == 0
    summary = _json(capsys)
    assert summary["consistent"] and summary["records"] == len(out.read_text().splitlines()) - 1
