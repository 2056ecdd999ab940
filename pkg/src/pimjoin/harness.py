"""
Run orchestration shared by the CLI subcommands: resolve a workload and
configuration, execute one query, and shape the JSON report.

Reports carry no wall-clock data, so equal inputs give byte-identical output.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .config import SimConfig
from .errors import ConfigError
from .query import build_join, join, select_distinct, select_where_eq, star_join
from .workload import SSB_JOINS, Workload, WorkloadSpec, generate

QUERIES = ("join", "select_distinct", "select_where", "star_join")


@dataclass(frozen=True)
class RunParams:
    workload: WorkloadSpec
    config: SimConfig
    query: str = "join"
    dim: Optional[str] = None
    ranks: Optional[int] = None
    literal: Optional[int] = None

    def rank_ids(self) -> Optional[List[int]]:
        if self.ranks is None:
            return None
        total = self.config.geometry.total_ranks
        if not 1 <= self.ranks <= total:
            raise ConfigError(f"ranks must lie in [1, {total}]")
        return list(range(self.ranks))


def default_dim(workload: Workload, dim: Optional[str]) -> str:
    return dim or next(iter(workload.join_pairs()))


def execute_run(p: RunParams, workload: Optional[Workload] = None, *, tracing: bool = False,
                keep: Optional[dict] = None) -> dict:
    """Run one query and return its report.

    `keep`, when given, receives the built state, join result and latency
    report for callers that need more than the JSON view.
    """
    if p.query not in QUERIES:
        raise ConfigError(f"unknown query {p.query!r}; choose from {', '.join(QUERIES)}")
    workload = workload or generate(p.workload)
    cfg = p.config
    report = {
        "query": p.query,
        "workload": p.workload.to_dict(),
        "workload_hash": p.workload.workload_hash(),
        "config": cfg.to_dict(),
        "config_fingerprint": cfg.fingerprint(),
        "ranks": p.ranks if p.ranks is not None else cfg.geometry.total_ranks,
    }
    if p.query == "star_join":
        if p.workload.kind != "ssb_like":
            raise ConfigError("star_join needs an ssb_like workload")
        lo = workload.tables["lineorder"]
        facts = {d: lo[fc] for d, (fc, _) in SSB_JOINS.items()}
        dims = {d: workload.tables[d][dc] for d, (_, dc) in SSB_JOINS.items()}
        res = star_join(facts, dims, cfg.geometry, cfg.timing, cfg.rlu, p.rank_ids())
        report.update({
            "total_cycles": res.total_cycles,
            "seconds": cfg.timing.cycles_to_seconds(res.total_cycles),
            "rank_groups": {k: v for k, v in sorted(res.rank_groups.items())},
            "per_dim_cycles": {k: r.total_cycles for k, r in sorted(res.reports.items())},
            "matched_fact_rows": int(len(res.matched_fact_rows())),
        })
        return report

    dim = default_dim(workload, p.dim)
    fact, keys = workload.join_inputs(dim)
    state, setup = build_join(keys, fact, cfg.geometry, cfg.timing, ranks=p.rank_ids(),
                              code_bits=p.workload.key_bits)
    report["dim"] = dim
    report["setup"] = setup.to_dict(wall_clock=False)
    if keep is not None:
        keep["state"] = state
    if p.query == "join":
        result, lat = join(state, cfg.rlu, tracing=tracing)
        tr = lat.trace
        report.update({
            "total_cycles": lat.total_cycles,
            "seconds": lat.seconds,
            "activations": tr.row_activations,
            "coalesce_hits": tr.probes_coalesced,
            "probes_issued": tr.probes_issued,
            "result_rows": len(result),
            "misses": result.misses,
            "host_expanded_rows": lat.host_expanded_rows,
            "partitions": max(1, len(lat.loads)),
            "pipeline": tr.to_dict(),
        })
        if keep is not None:
            keep["result"], keep["latency"] = result, lat
    elif p.query == "select_distinct":
        values, cost = select_distinct(state)
        report.update({"total_cycles": cost.cycles, "seconds": cfg.timing.cycles_to_seconds(cost.cycles),
                       "activations": cost.activations, "bursts": cost.bursts, "result_rows": len(values)})
        if keep is not None:
            keep["values"] = values
    else:
        literal = p.literal if p.literal is not None else int(np.asarray(keys)[0])
        rows, cost = select_where_eq(state, literal)
        report.update({"literal": literal, "total_cycles": cost.cycles,
                       "seconds": cfg.timing.cycles_to_seconds(cost.cycles),
                       "activations": cost.activations, "result_rows": len(rows)})
        if keep is not None:
            keep["rows"] = rows
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)


def flatten(report: dict, prefix: str = "") -> Dict[str, object]:
    out: Dict[str, object] = {}
    for k, v in report.items():
        name = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, name + "."))
        elif isinstance(v, (list, tuple)):
            out[name] = json.dumps(v)
        else:
            out[name] = v
    return out


def sweep_points(base: RunParams, tcmp: Sequence[int] = (), zipf: Sequence[float] = (),
                 sf: Sequence[float] = (), ranks: Sequence[int] = ()) -> List[RunParams]:
    """Cartesian grid over the given axes; empty axes keep the base value."""
    axes = [list(tcmp) or [None], list(zipf) or [None], list(sf) or [None], list(ranks) or [None]]
    points = []
    for t, z, s, r in itertools.product(*axes):
        cfg = base.config if t is None else base.config.with_tcmp(t)
        wl = base.workload
        if z is not None:
            wl = dataclasses.replace(wl, zipf_s=z)
        if s is not None:
            wl = dataclasses.replace(wl, scale_factor=s)
        points.append(dataclasses.replace(base, config=cfg, workload=wl,
                                          ranks=base.ranks if r is None else r))
    return points


def run_sweep(points: Sequence[RunParams], jobs: int = 1) -> List[dict]:
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    if jobs == 1 or len(points) < 2:
        return [execute_run(p) for p in points]
    with ProcessPoolExecutor(min(jobs, len(points))) as ex:
        return list(ex.map(execute_run, points))


def write_sweep_csv(reports: Iterable[dict], fp) -> None:
    rows = [flatten(r) for r in reports]
    cols: List[str] = []
    for r in rows:
        cols.extend(c for c in r if c not in cols)
    w = csv.DictWriter(fp, fieldnames=cols, restval="")
    w.writeheader()
    w.writerows(rows)
