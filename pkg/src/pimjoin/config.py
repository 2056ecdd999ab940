"""
Flat ``key = value`` configuration files covering geometry, timing and RLU
settings. Unknown keys are rejected; missing keys take their defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Dict, Optional

from .errors import ConfigError
from .memory import MemoryGeometry, TimingParams
from .rlu import RluConfig

CONFIG_ENV = "PIMJOIN_CONFIG"


@dataclass(frozen=True)
class SimConfig:
    geometry: MemoryGeometry = field(default_factory=MemoryGeometry)
    timing: TimingParams = field(default_factory=TimingParams)
    rlu: RluConfig = field(default_factory=RluConfig)

    def to_dict(self) -> Dict[str, dict]:
        return {
            "geometry": self.geometry.to_dict(),
            "timing": self.timing.to_dict(),
            "rlu": {
                "key_buffer_capacity": self.rlu.key_buffer_capacity,
                "coalesce_window": self.rlu.coalesce_window,
                "cpu_filter": self.rlu.cpu_filter,
            },
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_tcmp(self, t_cmp: int) -> "SimConfig":
        return dataclasses.replace(self, timing=self.timing.with_tcmp(t_cmp))


_GEOMETRY_KEYS = {f.name for f in dataclasses.fields(MemoryGeometry)}
_TIMING_KEYS = {f.name for f in dataclasses.fields(TimingParams)}
_RLU_KEYS = {"key_buffer_capacity", "coalesce_window", "cpu_filter"}


def _parse_int(key: str, raw: str) -> int:
    try:
        return int(raw, 0)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None


def parse_config(text: str) -> SimConfig:
    geo, tim, rlu = {}, {}, {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in _GEOMETRY_KEYS:
            geo[key] = _parse_int(key, raw)
        elif key in _TIMING_KEYS:
            tim[key] = _parse_int(key, raw)
        elif key == "key_buffer_capacity":
            rlu[key] = None if raw.lower() in ("auto", "none") else _parse_int(key, raw)
        elif key == "cpu_filter":
            rlu[key] = bool(_parse_int(key, raw))
        elif key in _RLU_KEYS:
            rlu[key] = _parse_int(key, raw)
        else:
            raise ConfigError(f"line {n}: unknown configuration key {key!r}")
    return SimConfig(MemoryGeometry(**geo), TimingParams(**tim), RluConfig(**rlu))


def load_config(path: Optional[str] = None) -> SimConfig:
    """Read `path`, else the file named by $PIMJOIN_CONFIG, else defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return SimConfig()
    try:
        with open(path) as f:
            return parse_config(f.read())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None


def dump_config(cfg: SimConfig) -> str:
    lines = []
    for section, values in cfg.to_dict().items():
        lines.append(f"# {section}")
        for k, v in values.items():
            if v is None:
                v = "auto"
            elif isinstance(v, bool):
                v = int(v)
            lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
