"""key=value configuration files for the pipeline.

Blank lines and ``#`` comments are ignored. Recognized keys::

    devices = 2
    workers = 4            # per device
    overlap = on           # on/off, true/false, 1/0
    reuse = on
    pool_depth = 4
    max_buffer = 67108864
    backend = cpu_parallel # cpu_parallel | instant | reference
    sim.copy_in = 0.010    # seconds; any StageCosts field, enables simulation
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Union

from ..errors import ConfigError
from .backends import StageCosts
from .pipeline import PipelineConfig

_TRUE = {"1", "on", "true", "yes"}
_FALSE = {"0", "off", "false", "no"}


def parse_bool(text: str) -> bool:
    v = text.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    values = dataclasses.asdict(base or PipelineConfig())
    values.pop("costs")
    costs = dataclasses.asdict(base.costs) if base and base.costs else {}
    cost_fields = {f.name for f in dataclasses.fields(StageCosts)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if key.startswith("sim."):
            name = key[4:]
            if name not in cost_fields:
                raise ConfigError(f"line {lineno}: unknown stage cost {name!r}")
            costs[name] = float(value)
        elif key in ("overlap", "reuse"):
            values[key] = parse_bool(value)
        elif key in ("devices", "workers", "pool_depth", "max_buffer"):
            values[key] = int(value)
        elif key == "backend":
            values[key] = value
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return PipelineConfig(**values, costs=StageCosts(**costs) if costs else None)


def load_config(path: Union[str, Path], base: PipelineConfig | None = None) -> PipelineConfig:
    return parse_config(Path(path).read_text(), base)
