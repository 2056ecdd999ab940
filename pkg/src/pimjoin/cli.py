"""Command-line entry point: ``pimjoin <subcommand> ...``."""

from __future__ import annotations

import argparse
import io
import json
import sys
from typing import List, Optional

from . import baseline, harness
from .config import CONFIG_ENV, dump_config, load_config
from .errors import ConfigError, PimError
from .query import build_join, join
from .state import dump_state, load_state
from .trace import export_trace, replay_trace, read_trace
from .workload import Workload, WorkloadSpec, generate

EXIT_OK = 0


def _parse_list(text: str, cast=float) -> List:
    return [cast(x) for x in text.split(",") if x.strip()]


def _parse_range(text: str) -> List[int]:
    """`a:b` (inclusive) or a comma list."""
    if ":" in text:
        a, b = text.split(":", 1)
        return list(range(int(a), int(b) + 1))
    return _parse_list(text, int)


def _add_workload_args(p: argparse.ArgumentParser, grid: bool = False) -> None:
    g = p.add_argument_group("workload")
    g.add_argument("--workload", choices=("ssb", "synthetic"), default="ssb")
    g.add_argument("--workload-dir", help="read tables written by `gen` instead of generating")
    if grid:
        # sweep axes: comma lists, the base point uses the defaults
        g.add_argument("--sf", dest="sf_list", help="comma list of scale factors")
        g.add_argument("--zipf", dest="zipf_list", help="comma list of Zipf factors")
        p.set_defaults(sf=0.01, zipf=0.0)
    else:
        g.add_argument("--sf", type=float, default=0.01, help="SSB scale factor")
        g.add_argument("--zipf", type=float, default=0.0)
    g.add_argument("--size-r", type=int, default=10_000, help="synthetic |R|")
    g.add_argument("--multiplier", type=int, default=1, help="synthetic |S| / |R|")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--run-length", type=int, default=1)
    g.add_argument("--miss-rate", type=float, default=0.0)


def _add_sim_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help=f"config file (default: ${CONFIG_ENV})")
    p.add_argument("--tcmp", type=int, help="override comparator delay t_CMP")
    p.add_argument("--ranks", type=int, help="use the first N ranks (default: all)")
    p.add_argument("--dim", help="dimension to join (customer, part, supplier, date, or R)")


def _workload(args) -> tuple:
    if args.workload_dir:
        wl = Workload.read(args.workload_dir)
        return wl.spec, wl
    if args.workload == "ssb":
        spec = WorkloadSpec("ssb_like", scale_factor=args.sf, seed=args.seed,
                            run_length=args.run_length, miss_rate=args.miss_rate)
    else:
        spec = WorkloadSpec("synthetic_pair", size_r=args.size_r, multiplier=args.multiplier,
                            zipf_s=args.zipf, key_bits=32, seed=args.seed, miss_rate=args.miss_rate)
    return spec, None


def _params(args, query: str = "join") -> tuple:
    cfg = load_config(args.config)
    if args.tcmp is not None:
        cfg = cfg.with_tcmp(args.tcmp)
    spec, wl = _workload(args)
    p = harness.RunParams(spec, cfg, query, args.dim, args.ranks, getattr(args, "literal", None))
    return p, wl


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_config(args) -> int:
    _emit(dump_config(load_config(args.config)), args.out)
    return EXIT_OK


def cmd_gen(args) -> int:
    spec, _ = _workload(args)
    wl = generate(spec)
    wl.write(args.out)
    print(json.dumps({"out": args.out, "workload_hash": spec.workload_hash(),
                      "tables": {n: len(t) for n, t in sorted(wl.tables.items())}}, sort_keys=True))
    return EXIT_OK


def cmd_build(args) -> int:
    p, wl = _params(args)
    wl = wl or generate(p.workload)
    dim = harness.default_dim(wl, p.dim)
    fact, keys = wl.join_inputs(dim)
    state, setup = build_join(keys, fact, p.config.geometry, p.config.timing, ranks=p.rank_ids(),
                              code_bits=p.workload.key_bits)
    if args.out:
        with open(args.out, "wb") as f:
            dump_state(state, f)
    report = {"dim": dim, "workload_hash": p.workload.workload_hash(),
              "config_fingerprint": p.config.fingerprint(), "geometry_hash": p.config.geometry.fingerprint(),
              "setup": setup.to_dict(wall_clock=args.wall_clock), "dump": args.out}
    _emit(harness.report_json(report) + "\n", None)
    return EXIT_OK


def cmd_run(args) -> int:
    p, wl = _params(args, args.query)
    if args.dump:
        return _run_from_dump(args, p)
    keep: dict = {}
    report = harness.execute_run(p, wl, keep=keep)
    if args.output_csv and "result" in keep:
        keep["result"].to_csv(args.output_csv)
    _emit(harness.report_json(report) + "\n", args.out)
    return EXIT_OK


def _run_from_dump(args, p) -> int:
    if p.query != "join":
        raise ConfigError("--dump supports the join query only")
    with open(args.dump, "rb") as f:
        state = load_state(f, p.config.geometry)
    # the dump fixes the layout; timing comes from the active configuration
    state.timing = p.config.timing
    result, lat = join(state, p.config.rlu)
    report = {"query": "join", "dump": args.dump, "config_fingerprint": p.config.fingerprint(),
              "total_cycles": lat.total_cycles, "seconds": lat.seconds,
              "activations": lat.trace.row_activations, "coalesce_hits": lat.trace.probes_coalesced,
              "probes_issued": lat.trace.probes_issued, "result_rows": len(result)}
    if args.output_csv:
        result.to_csv(args.output_csv)
    _emit(harness.report_json(report) + "\n", args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    p, _ = _params(args)
    points = harness.sweep_points(
        p,
        tcmp=_parse_range(args.tcmp_range) if args.tcmp_range else (),
        zipf=_parse_list(args.zipf_list) if args.zipf_list else (),
        sf=_parse_list(args.sf_list) if args.sf_list else (),
        ranks=_parse_list(args.ranks_list, int) if args.ranks_list else (),
    )
    reports = harness.run_sweep(points, args.jobs)
    buf = io.StringIO()
    harness.write_sweep_csv(reports, buf)
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    p, wl = _params(args)
    wl = wl or generate(p.workload)
    report = harness.execute_run(p, wl)
    fact, keys = wl.join_inputs(report["dim"])
    run = baseline.classic_hash_join(keys, fact, threads=args.threads)
    if sum(run.pairs.values()) != report["result_rows"]:
        raise PimError("baseline and PIM join disagree on the result size")
    sp = baseline.compare_runs(report, run.seconds, p.config.timing.clock_period_ps,
                               baseline_workload_hash=p.workload.workload_hash(), threads=run.threads)
    _emit(json.dumps(sp.to_dict(), sort_keys=True, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_trace(args) -> int:
    p, wl = _params(args)
    keep: dict = {}
    report = harness.execute_run(p, wl, tracing=True, keep=keep)
    trace = keep["latency"].trace
    g, t = p.config.geometry, p.config.timing
    with open(args.out, "w") as f:
        n = export_trace(trace, g, t, f)
    with open(args.out) as f:
        _, records = read_trace(f)
    replayed = replay_trace(records, g, t)
    summary = {"trace": args.out, "records": n, "total_cycles": report["total_cycles"],
               "replayed_cycles": replayed, "consistent": replayed == report["total_cycles"]}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK if summary["consistent"] else 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pimjoin", description="PIM hash-join simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("config", help="configuration utilities")
    csub = p.add_subparsers(dest="action", required=True)
    d = csub.add_parser("dump", help="print the resolved configuration")
    d.add_argument("--config")
    d.add_argument("--out")
    d.set_defaults(func=cmd_config)

    p = sub.add_parser("gen", help="generate a workload as CSV tables")
    _add_workload_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("build", help="build and dump PIM structures")
    _add_workload_args(p)
    _add_sim_args(p)
    p.add_argument("--out", help="binary dump path")
    p.add_argument("--wall-clock", action="store_true", help="include host construction time")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("run", help="execute one query")
    _add_workload_args(p)
    _add_sim_args(p)
    p.add_argument("--query", choices=harness.QUERIES, default="join")
    p.add_argument("--literal", type=int, help="select_where literal")
    p.add_argument("--dump", help="join against structures from `build --out`")
    p.add_argument("--output-csv", help="write join rows (key, fact_index, dim_index)")
    p.add_argument("--out", help="report path (default stdout)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter grid into one CSV")
    _add_workload_args(p, grid=True)
    p.add_argument("--config")
    p.add_argument("--dim")
    p.add_argument("--tcmp", dest="tcmp_range", help="t_CMP values, e.g. 0:4")
    p.add_argument("--ranks", dest="ranks_list", help="comma list of rank counts")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_sweep, tcmp=None, ranks=None)

    p = sub.add_parser("compare", help="modeled PIM join vs measured host hash join")
    _add_workload_args(p)
    _add_sim_args(p)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("trace", help="export and replay a per-access trace")
    _add_workload_args(p)
    _add_sim_args(p)
    p.add_argument("--out", required=True, help="trace file path")
    p.set_defaults(func=cmd_trace)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PimError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
