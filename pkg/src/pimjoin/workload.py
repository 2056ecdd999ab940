"""
Seeded workload generation: an SSB-like star schema with linear scaling of
every table, and Zipf-skewed synthetic R/S join pairs with 32-bit keys.
"""

from __future__ import annotations

import csv
import datetime
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import WorkloadError

SSB_BASE_ROWS = {"lineorder": 6_000_000, "customer": 30_000, "part": 200_000, "supplier": 2_000}
DATE_ROWS = 2556
DATE_START = datetime.date(1992, 1, 1)

# fact column <-> dimension key column
SSB_JOINS = {
    "customer": ("lo_custkey", "c_custkey"),
    "part": ("lo_partkey", "p_partkey"),
    "supplier": ("lo_suppkey", "s_suppkey"),
    "date": ("lo_orderdate", "d_datekey"),
}

# full-schema binary row widths (ints 4 bytes, CHAR(n) n bytes); these size
# the raw dataset the auxiliary structures are measured against
SSB_ROW_BYTES = {"lineorder": 82, "customer": 116, "part": 98, "supplier": 106, "date": 91}
SYNTHETIC_TUPLE_BYTES = 8

ZIPF_FACTORS = (0.0, 0.5, 1.5, 2.0)
MULTIPLIERS = (1, 2, 4, 8)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str = "ssb_like"
    scale_factor: float = 0.01
    size_r: int = 0
    multiplier: int = 1
    zipf_s: float = 0.0
    key_bits: Optional[int] = None
    seed: int = 0
    run_length: int = 1
    miss_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ssb_like", "synthetic_pair"):
            raise WorkloadError(f"unknown workload kind {self.kind!r}")
        if self.kind == "ssb_like" and not self.scale_factor > 0:
            raise WorkloadError("scale_factor must be > 0")
        if self.kind == "synthetic_pair":
            if self.size_r < 1:
                raise WorkloadError("size_r must be >= 1")
            if self.size_r > 2 ** 32:
                raise WorkloadError("size_r exceeds the 32-bit key domain")
            if self.multiplier not in MULTIPLIERS:
                raise WorkloadError(f"multiplier must be one of {MULTIPLIERS}")
        if not 0 <= self.zipf_s <= 2:
            raise WorkloadError("zipf_s must lie in [0, 2]")
        if self.run_length < 1:
            raise WorkloadError("run_length must be >= 1")
        if not 0 <= self.miss_rate <= 1:
            raise WorkloadError("miss_rate must lie in [0, 1]")
        if not 0 <= self.seed < 2 ** 64:
            raise WorkloadError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return asdict(self)

    def workload_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def ssb_rows(self) -> Dict[str, int]:
        rows = {t: _round_half_up(n * self.scale_factor) for t, n in SSB_BASE_ROWS.items()}
        rows["date"] = DATE_ROWS
        return rows


@dataclass
class Table:
    name: str
    columns: Dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def __getitem__(self, col: str) -> np.ndarray:
        return self.columns[col]

    def to_csv(self, path: str) -> None:
        names = list(self.columns)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(names)
            w.writerows(zip(*(self.columns[c].tolist() for c in names)))

    @classmethod
    def from_csv(cls, path: str, name: Optional[str] = None) -> "Table":
        with open(path, newline="") as f:
            r = csv.reader(f)
            names = next(r)
            rows = list(r)
        cols = {c: np.array([int(row[i]) for row in rows], dtype=np.int64) for i, c in enumerate(names)}
        return cls(name or os.path.splitext(os.path.basename(path))[0], cols)


@dataclass
class Workload:
    spec: WorkloadSpec
    tables: Dict[str, Table]

    def join_pairs(self):
        if self.spec.kind == "synthetic_pair":
            return {"R": ("S", "s_key", "R", "r_key")}
        return {dim: ("lineorder", fcol, dim, dcol) for dim, (fcol, dcol) in SSB_JOINS.items()}

    def join_inputs(self, dim: Optional[str] = None) -> Tuple[np.ndarray, np.ndarray]:
        """(fact keys, dimension keys) for one join of this workload."""
        pairs = self.join_pairs()
        if dim is None:
            dim = next(iter(pairs))
        if dim not in pairs:
            raise WorkloadError(f"no join for {dim!r}; choose from {sorted(pairs)}")
        ft, fc, dt, dc = pairs[dim]
        return self.tables[ft][fc], self.tables[dt][dc]

    def write(self, outdir: str) -> None:
        os.makedirs(outdir, exist_ok=True)
        for t in self.tables.values():
            t.to_csv(os.path.join(outdir, f"{t.name}.csv"))
        with open(os.path.join(outdir, "workload.json"), "w") as f:
            json.dump({"spec": self.spec.to_dict(), "workload_hash": self.spec.workload_hash()},
                      f, indent=2, sort_keys=True)

    @classmethod
    def read(cls, indir: str) -> "Workload":
        with open(os.path.join(indir, "workload.json")) as f:
            spec = WorkloadSpec(**json.load(f)["spec"])
        names = ["R", "S"] if spec.kind == "synthetic_pair" else ["lineorder", *SSB_JOINS]
        tables = {n: Table.from_csv(os.path.join(indir, f"{n}.csv"), n) for n in names}
        return cls(spec, tables)


def _rngs(seed: int, n: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _date_keys() -> np.ndarray:
    days = [DATE_START + datetime.timedelta(days=i) for i in range(DATE_ROWS)]
    return np.array([d.year * 10000 + d.month * 100 + d.day for d in days], dtype=np.int64)


def _foreign(rng, keys: np.ndarray, n: int, run_length: int = 1) -> np.ndarray:
    draws = rng.integers(0, len(keys), size=-(-n // run_length))
    return keys[np.repeat(draws, run_length)[:n]]


def _inject_misses(rng, col: np.ndarray, rate: float, outside_from: int) -> np.ndarray:
    if rate <= 0:
        return col
    col = col.copy()
    hit = rng.random(len(col)) < rate
    col[hit] = outside_from + rng.integers(0, 1 << 20, size=int(hit.sum()))
    return col


def gen_ssb_like(sf: float, seed: int, run_length: int = 1, miss_rate: float = 0.0) -> Dict[str, Table]:
    """SSB-like tables with join keys plus a few filter/value columns.

    Every table, `part` included, scales linearly with `sf`; the date table
    is fixed at 2556 days starting 1992-01-01.
    """
    spec = WorkloadSpec("ssb_like", scale_factor=sf, seed=seed, run_length=run_length, miss_rate=miss_rate)
    rows = spec.ssb_rows()
    empty = [t for t, n in rows.items() if n < 1]
    if empty:
        raise WorkloadError(f"scale factor {sf} yields empty tables: {', '.join(empty)}")
    r = _rngs(seed, 12)
    cust = np.arange(1, rows["customer"] + 1, dtype=np.int64)
    part = np.arange(1, rows["part"] + 1, dtype=np.int64)
    supp = np.arange(1, rows["supplier"] + 1, dtype=np.int64)
    dates = _date_keys()
    n = rows["lineorder"]
    lo = {
        "lo_orderkey": np.arange(n, dtype=np.int64) // 4 + 1,
        "lo_custkey": _inject_misses(r[5], _foreign(r[0], cust, n), miss_rate, len(cust) + 1),
        "lo_partkey": _inject_misses(r[6], _foreign(r[1], part, n), miss_rate, len(part) + 1),
        "lo_suppkey": _inject_misses(r[7], _foreign(r[2], supp, n, run_length), miss_rate, len(supp) + 1),
        "lo_orderdate": _inject_misses(r[8], _foreign(r[3], dates, n), miss_rate, 20000101),
        "lo_quantity": r[4].integers(1, 51, size=n).astype(np.int64),
    }
    lo["lo_revenue"] = lo["lo_quantity"] * r[4].integers(90_000, 110_000, size=n).astype(np.int64) // 100
    return {
        "lineorder": Table("lineorder", lo),
        "customer": Table("customer", {"c_custkey": cust, "c_region": r[9].integers(0, 5, len(cust))}),
        "part": Table("part", {"p_partkey": part, "p_category": r[10].integers(0, 25, len(part))}),
        "supplier": Table("supplier", {"s_suppkey": supp, "s_region": r[11].integers(0, 5, len(supp))}),
        "date": Table("date", {"d_datekey": dates, "d_year": dates // 10000}),
    }


def zipf_cdf(s: float, domain_size: int) -> np.ndarray:
    k = np.arange(1, domain_size + 1, dtype=np.float64)
    w = k ** -s
    cdf = np.cumsum(w)
    return cdf / cdf[-1]


def gen_zipf_keys(n: int, s: float, domain_size: int, seed: int) -> np.ndarray:
    """Ranks in [1, domain_size] with P(k) proportional to k**-s (inverse CDF)."""
    if n < 1 or domain_size < 1:
        raise WorkloadError("n and domain_size must be >= 1")
    if s < 0:
        raise WorkloadError("Zipf exponent must be >= 0")
    cdf = zipf_cdf(s, domain_size)
    u = np.random.default_rng(seed).random(n)
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, domain_size - 1).astype(np.int64) + 1


def _unique_u32(rng, n: int) -> np.ndarray:
    keys = np.zeros(0, dtype=np.int64)
    while len(keys) < n:
        more = rng.integers(0, 2 ** 32, size=int((n - len(keys)) * 1.05) + 16, dtype=np.int64)
        keys = np.unique(np.concatenate([keys, more]))
    return rng.permutation(keys)[:n]


def gen_synthetic_pair(size_r: int, multiplier: int, s: float, seed: int) -> Tuple[Table, Table]:
    """R with unique 32-bit keys; S = multiplier*|R| keys drawn from R with Zipf skew s.

    R depends on the seed only, so pairs with different s share R and the
    placement of its keys.
    """
    WorkloadSpec("synthetic_pair", size_r=size_r, multiplier=multiplier, zipf_s=s, seed=seed)
    rr, rs = _rngs(seed, 2)
    rkeys = _unique_u32(rr, size_r)
    rvals = rr.integers(0, 2 ** 32, size=size_r, dtype=np.int64)
    n_s = size_r * multiplier
    ranks = gen_zipf_keys(n_s, s, size_r, int(rs.integers(0, 2 ** 63)))
    skeys = rkeys[ranks - 1]
    svals = rs.integers(0, 2 ** 32, size=n_s, dtype=np.int64)
    return Table("R", {"r_key": rkeys, "r_val": rvals}), Table("S", {"s_key": skeys, "s_val": svals})


def generate(spec: WorkloadSpec) -> Workload:
    if spec.kind == "ssb_like":
        tables = gen_ssb_like(spec.scale_factor, spec.seed, spec.run_length, spec.miss_rate)
    else:
        R, S = gen_synthetic_pair(spec.size_r, spec.multiplier, spec.zipf_s, spec.seed)
        if spec.miss_rate > 0:
            rng = _rngs(spec.seed, 3)[2]
            S.columns["s_key"] = _inject_misses(rng, S["s_key"], spec.miss_rate, 2 ** 32)
        tables = {"R": R, "S": S}
    return Workload(spec, tables)


def raw_dataset_bytes(spec: WorkloadSpec) -> int:
    if spec.kind == "synthetic_pair":
        return spec.size_r * (1 + spec.multiplier) * SYNTHETIC_TUPLE_BYTES
    return sum(SSB_ROW_BYTES[t] * n for t, n in spec.ssb_rows().items())
