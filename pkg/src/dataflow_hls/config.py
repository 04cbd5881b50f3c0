"""Run configuration: a flat ``key = value`` file merged with command-line overrides."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .bench import KINDS, SCALES
from .ir import OPCODES, TERMINATORS, LatencyTable
from .memory import CACHED, PRESETS, UNCACHED_BURST, MemConfig

ENGINES = ("monolithic", "pipeline")
MEM_KEYS = {f.name for f in fields(MemConfig)} - {"policies"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    kernel: str | None = None
    ir_file: str | None = None
    args: tuple = ()
    scale: str = "desk"
    seed: int = 0
    engines: tuple = ENGINES
    trace: bool = False
    trace_rows: int = 200_000
    gantt_window: tuple = (0, 120)
    out: str = "out"
    dump_cdfg: bool = False
    max_dup_nodes: int = 8
    fifo_depth: int = 16
    preset: str | None = None
    mem: dict = field(default_factory=dict)
    policies: dict = field(default_factory=dict)
    latency: dict = field(default_factory=dict)

    def mem_config(self) -> MemConfig:
        values = dict(PRESETS[self.preset]) if self.preset else {}
        values.update(self.mem)
        try:
            return MemConfig(policies=dict(self.policies), **values)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def latency_table(self) -> LatencyTable:
        try:
            return LatencyTable.default().with_overrides(self.latency)
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc).strip("'\"")) from None

    def resolved(self) -> dict:
        """Every effective setting, for provenance records."""
        table = self.latency_table()
        return {
            "input": {"kernel": self.kernel, "ir_file": self.ir_file, "args": list(self.args),
                      "scale": self.scale, "seed": self.seed},
            "engines": list(self.engines),
            "max_dup_nodes": self.max_dup_nodes,
            "fifo_depth": self.fifo_depth,
            "memory": self.mem_config().as_dict(),
            "latency": {op: list(table[op]) for op in sorted(table)},
            "trace": self.trace,
            "trace_rows": self.trace_rows,
        }

    def check(self) -> None:
        if (self.kernel is None) == (self.ir_file is None):
            raise ConfigError("exactly one of kernel or ir_file is required")
        if self.kernel is not None and self.kernel not in KINDS:
            raise ConfigError(f"kernel: unknown kind {self.kernel!r}")
        if self.scale not in SCALES:
            raise ConfigError(f"scale: unknown scale {self.scale!r}")
        if not self.engines or any(e not in ENGINES for e in self.engines):
            raise ConfigError(f"engines: expected a subset of {','.join(ENGINES)}")
        if self.max_dup_nodes < 0:
            raise ConfigError("max_dup_nodes must be >= 0")
        if self.fifo_depth < 1:
            raise ConfigError("fifo_depth must be >= 1")
        if self.trace_rows < 0:
            raise ConfigError("trace_rows must be >= 0")
        lo, hi = self.gantt_window
        if not 0 <= lo <= hi:
            raise ConfigError("gantt_window must be START:END with 0 <= START <= END")
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {self.preset!r}")
        self.mem_config()
        self.latency_table()


def _bool(key: str, text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def _int(key: str, text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from None


def apply(cfg: RunConfig, key: str, value: str) -> None:
    """Set one ``key = value`` pair; unknown keys raise :class:`ConfigError`."""
    key, value = key.strip(), value.strip()
    if key in ("kernel", "ir_file", "scale", "out", "preset"):
        setattr(cfg, key, value or None if key in ("kernel", "ir_file", "preset") else value)
    elif key in ("seed", "max_dup_nodes", "fifo_depth", "trace_rows"):
        setattr(cfg, key, _int(key, value))
    elif key in ("trace", "dump_cdfg"):
        setattr(cfg, key, _bool(key, value))
    elif key == "engines":
        cfg.engines = tuple(e.strip() for e in value.split(",") if e.strip())
    elif key == "args":
        cfg.args = tuple(_number(key, t) for t in value.split(",") if t.strip())
    elif key == "gantt_window":
        lo, sep, hi = value.partition(":")
        if not sep:
            raise ConfigError("gantt_window: expected START:END")
        cfg.gantt_window = (_int(key, lo), _int(key, hi))
    elif key in MEM_KEYS:
        cfg.mem[key] = _bool(key, value) if key == "cache_enabled" else _int(key, value)
    elif key.startswith("policy."):
        if value not in (CACHED, UNCACHED_BURST):
            raise ConfigError(f"{key}: expected {CACHED} or {UNCACHED_BURST}")
        cfg.policies[key[len("policy."):]] = value
    elif key.startswith("latency."):
        op = key[len("latency."):]
        if op not in OPCODES or op in TERMINATORS:
            raise ConfigError(f"unknown config key {key!r}")
        cycles, _, mode = value.partition(",")
        pipelined = True if not mode else mode.strip() in ("pipelined", "true", "1")
        cfg.latency[op] = (_int(key, cycles), pipelined)
    else:
        raise ConfigError(f"unknown config key {key!r}")


def _number(key: str, text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: bad number {text!r}") from None


def load_file(cfg: RunConfig, path: str | Path) -> None:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{n}: expected key = value")
        apply(cfg, key, value)
