"""Text artifacts derived from simulation reports: Gantt charts, comparison
tables and the human-readable summary."""

from __future__ import annotations

import csv
import io
from pathlib import Path

from .sim import BUSY, FIFO_EMPTY, FIFO_FULL, IDLE, MEM, SimReport

GLYPHS = {BUSY: "#", MEM: "M", FIFO_FULL: "F", FIFO_EMPTY: "E", IDLE: "."}
LEGEND = "legend: # busy  M mem-stall  F fifo-full  E fifo-empty  . idle"


class TraceWindowError(ValueError):
    pass


def read_trace(source) -> list[tuple[int, int, str]]:
    """Rows ``(cycle, stage, state)`` from a CSV path, CSV text, or an existing row list."""
    if isinstance(source, list):
        return source
    is_text = isinstance(source, str) and source.startswith("cycle,")
    text = source if is_text else Path(source).read_text()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["cycle", "stage", "state"]:
        raise ValueError("trace must start with the header cycle,stage,state")
    rows = []
    for rec in reader:
        if rec:
            cycle, stage, state = rec
            if state not in GLYPHS:
                raise ValueError(f"unknown state {state!r} in trace")
            rows.append((int(cycle), int(stage), state))
    return rows


def render_gantt(trace, window: tuple[int, int], names: list[str] | None = None) -> str:
    """One row per stage and one column per cycle in ``[start, end)``."""
    rows = read_trace(trace)
    start, end = window
    covered = max((c for c, _, _ in rows), default=-1) + 1
    if start < 0 or end < start or start > covered or end > covered:
        raise TraceWindowError(f"window {start}:{end} outside trace of {covered} cycles")
    stages = sorted({s for _, s, _ in rows})
    labels = [names[s] if names and s < len(names) else f"stage{s}" for s in stages]
    width = max((len(x) for x in labels), default=5)
    header = [f"cycles {start}..{end}", LEGEND]
    if end == start:
        return "\n".join(header) + "\n"
    ruler = "".join(str((c // 10) % 10) if c % 10 == 0 else " " for c in range(start, end))
    header.append(f"{'':<{width}} |{ruler}|")
    grid = {s: ["?"] * (end - start) for s in stages}
    for c, s, state in rows:
        if start <= c < end:
            grid[s][c - start] = GLYPHS[state]
    lines = header + [f"{lab:<{width}} |{''.join(grid[s])}|" for s, lab in zip(stages, labels)]
    return "\n".join(lines) + "\n"


COMPARISON_FIELDS = ("kernel", "sweep_key", "sweep_value", "engine", "total_cycles", "stages",
                     "busy_cycles", "mem_stall_cycles", "fifo_stall_cycles", "mem_requests",
                     "hit_ratio", "digest", "speedup")


def comparison_rows(kernel: str, reports: dict[str, SimReport], sweep: tuple = ("", "")) -> list[dict]:
    speedup = ""
    if "monolithic" in reports and "pipeline" in reports:
        speedup = f"{reports['monolithic'].total_cycles / reports['pipeline'].total_cycles:.6f}"
    out = []
    for engine in ("monolithic", "pipeline"):
        r = reports.get(engine)
        if r is None:
            continue
        total = lambda state: sum(s["cycles"][state] for s in r.stages)  # noqa: E731
        out.append({
            "kernel": kernel, "sweep_key": sweep[0], "sweep_value": sweep[1], "engine": engine,
            "total_cycles": r.total_cycles, "stages": len(r.stages),
            "busy_cycles": total(BUSY), "mem_stall_cycles": total(MEM),
            "fifo_stall_cycles": total(FIFO_FULL) + total(FIFO_EMPTY),
            "mem_requests": r.memory["requests"], "hit_ratio": f"{r.memory['hit_ratio']:.6f}",
            "digest": r.digest, "speedup": speedup if engine == "pipeline" else "",
        })
    return out


def comparison_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COMPARISON_FIELDS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def summary_text(kernel: str, reports: dict[str, SimReport], engines: tuple, status: str) -> str:
    lines = [f"kernel: {kernel}"]
    for engine in ("monolithic", "pipeline"):
        r = reports.get(engine)
        if engine not in engines:
            lines.append(f"{engine}: skipped")
        elif r is not None:
            lines.append(f"{engine}: {r.total_cycles} cycles, {len(r.stages)} stage(s), digest {r.digest}")
    if "monolithic" in reports and "pipeline" in reports:
        m, p = reports["monolithic"].total_cycles, reports["pipeline"].total_cycles
        lines.append(f"speedup: {m / p:.6f} ({m} / {p})")
    lines.append(f"status: {status}")
    return "\n".join(lines) + "\n"
