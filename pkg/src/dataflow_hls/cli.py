"""Command-line driver: parse, partition, simulate both engines, write reports.

Exit codes: 0 success, 2 bad configuration or input, 3 functional mismatch,
4 deadlock.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

from .bench import KernelSpec, generate, kernel_catalog
from .cdfg import build_cdfg
from .config import ENGINES, ConfigError, RunConfig, apply, load_file
from .ir import IRError, MemoryImage, ParseError, Trap, interpret, parse_ir, print_ir, validate, values_close
from .partition import PlanningError, build_pipeline
from .report import comparison_csv, comparison_rows, render_gantt, summary_text
from .sim import DeadlockError, simulate_monolithic, simulate_pipeline

EXIT_OK, EXIT_CONFIG, EXIT_MISMATCH, EXIT_DEADLOCK = 0, 2, 3, 4


class RunFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _load_input(cfg: RunConfig, memory_file: str | None):
    """Return ``(name, program, memory, args, kernel-or-None)``."""
    if cfg.kernel:
        k = generate(KernelSpec.at_scale(cfg.kernel, cfg.scale, cfg.seed))
        return cfg.kernel, k.program, k.memory, k.args, k
    try:
        p = parse_ir(Path(cfg.ir_file).read_text())
    except OSError as exc:
        raise RunFailure(EXIT_CONFIG, f"cannot read {cfg.ir_file}: {exc.strerror}") from None
    except ParseError as exc:
        raise RunFailure(EXIT_CONFIG, f"{cfg.ir_file}: {exc}") from None
    problems = validate(p)
    if problems:
        raise RunFailure(EXIT_CONFIG, f"{cfg.ir_file}: " + "; ".join(str(v) for v in problems))
    mem = MemoryImage.zeros(p)
    if memory_file:
        try:
            data = json.loads(Path(memory_file).read_text())
        except (OSError, ValueError) as exc:
            raise RunFailure(EXIT_CONFIG, f"cannot load memory file {memory_file}: {exc}") from None
        for space, values in data.items():
            if space not in mem.arrays:
                raise RunFailure(EXIT_CONFIG, f"memory file names unknown space {space!r}")
            mem.arrays[space][:len(values)] = values
    if len(cfg.args) != len(p.args):
        raise RunFailure(EXIT_CONFIG, f"{p.name} takes {len(p.args)} argument(s), got {len(cfg.args)}")
    return p.name, p, mem, cfg.args, None


def run_point(cfg: RunConfig, out: Path, memory_file: str | None = None,
              sweep: tuple = ("", "")) -> tuple[int, list[dict]]:
    """Run one configuration and write its artifacts under ``out``."""
    name, p, mem, args, kernel = _load_input(cfg, memory_file)
    table = cfg.latency_table()
    mem_cfg = cfg.mem_config()
    resolved = cfg.resolved()
    limit = cfg.trace_rows if cfg.trace else 0

    try:
        ref = interpret(p, mem, args, trace=False)
    except Trap as exc:
        raise RunFailure(EXIT_CONFIG, f"{name}: reference run trapped: {exc}") from None
    if kernel is not None and not kernel.check(ref.memory, ref.value):
        raise RunFailure(EXIT_MISMATCH, f"{name}: reference run disagrees with the host oracle")
    ref_digest = ref.memory.digest()

    if cfg.dump_cdfg:
        _write(out / "cdfg.dot", build_cdfg(p).dump())

    reports = {}
    problems = []
    status = "ok"
    try:
        if "monolithic" in cfg.engines:
            reports["monolithic"] = simulate_monolithic(p, mem_cfg, mem, args, table, limit)
        if "pipeline" in cfg.engines:
            try:
                pipe = build_pipeline(p, table, cfg.max_dup_nodes, cfg.fifo_depth)
            except PlanningError as exc:
                raise RunFailure(EXIT_CONFIG, f"{name}: cannot partition: {exc}") from None
            _write(out / "manifest.json", pipe.manifest_text())
            for prog in pipe.stages:
                _write(out / "stages" / f"{prog.name}.ir", print_ir(prog))
            reports["pipeline"] = simulate_pipeline(pipe, mem_cfg, mem, args, limit)
    except DeadlockError as exc:
        status = f"deadlock: {exc}"
        _write(out / "summary.txt", summary_text(name, reports, cfg.engines, status))
        raise RunFailure(EXIT_DEADLOCK, f"{name}: {exc}") from None
    except (Trap, IRError) as exc:
        raise RunFailure(EXIT_MISMATCH, f"{name}: simulation failed: {exc}") from None

    for engine, r in reports.items():
        r.config = resolved
        if r.digest != ref_digest or not values_close(r.return_value, ref.value):
            problems.append(f"{engine} output differs from the reference run")
        _write(out / f"report_{engine}.json", r.to_json())
        if cfg.trace:
            _write(out / f"trace_{engine}.csv", r.trace_csv())
            covered = (r.trace_rows[-1][0] + 1) if r.trace_rows else 0
            lo, hi = cfg.gantt_window
            window = (min(lo, covered), min(hi, covered))
            names = [s["name"] for s in r.stages]
            _write(out / f"gantt_{engine}.txt", render_gantt(r.trace_rows, window, names))
    if problems:
        status = "mismatch: " + "; ".join(problems)
    rows = comparison_rows(name, reports, sweep)
    _write(out / "comparison.csv", comparison_csv(rows))
    _write(out / "summary.txt", summary_text(name, reports, cfg.engines, status))
    if problems:
        raise RunFailure(EXIT_MISMATCH, f"{name}: {status}")
    return EXIT_OK, rows


def _parse_sweep(text: str) -> tuple[str, list[str]]:
    key, sep, values = text.partition("=")
    vals = [v.strip() for v in values.split(",") if v.strip()]
    if not sep or not key.strip() or not vals:
        raise ConfigError("sweep: expected KEY=v1,v2,...")
    return key.strip(), vals


def _build_config(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if ns.config:
        load_file(cfg, ns.config)
    overrides = [
        ("kernel", ns.kernel), ("ir_file", ns.ir_file), ("scale", ns.scale), ("seed", ns.seed),
        ("engines", ns.engines), ("out", ns.out), ("max_dup_nodes", ns.max_dup_nodes),
        ("fifo_depth", ns.fifo_depth), ("args", ns.args), ("gantt_window", ns.gantt_window),
    ]
    for key, value in overrides:
        if value is not None:
            apply(cfg, key, str(value))
    if ns.kernel is not None:
        cfg.ir_file = None
    if ns.ir_file is not None:
        cfg.kernel = None
    if ns.trace:
        cfg.trace = True
    if ns.dump_cdfg:
        cfg.dump_cdfg = True
    for item in ns.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        apply(cfg, key, value)
    cfg.check()
    return cfg


def cmd_run(ns: argparse.Namespace) -> int:
    try:
        cfg = _build_config(ns)
        points = [(("", ""), cfg)]
        if ns.sweep:
            key, values = _parse_sweep(ns.sweep)
            points = []
            for v in values:
                c = copy.deepcopy(cfg)
                apply(c, key, v)
                c.check()
                points.append(((key, v), c))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(cfg.out)
    all_rows = []
    for sweep, c in points:
        where = out / f"{sweep[0]}={sweep[1]}" if ns.sweep else out
        try:
            _, rows = run_point(c, where, ns.memory, sweep)
        except RunFailure as exc:
            print(f"error: {exc}", file=sys.stderr)
            return exc.code
        all_rows += rows
        print((where / "summary.txt").read_text(), end="")
    if ns.sweep:
        _write(out / "comparison.csv", comparison_csv(all_rows))
    return EXIT_OK


def cmd_gantt(ns: argparse.Namespace) -> int:
    lo, sep, hi = ns.window.partition(":")
    try:
        text = render_gantt(Path(ns.trace_file), (int(lo), int(hi)) if sep else (0, int(lo)))
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(text, end="")
    return EXIT_OK


def cmd_kernels(ns: argparse.Namespace) -> int:
    for kind, description, notes in kernel_catalog():
        print(f"{kind}: {description}")
        if notes:
            print(f"    {notes}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dataflow-hls", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="partition and simulate a kernel")
    src = r.add_mutually_exclusive_group()
    src.add_argument("--kernel", help="built-in benchmark kind")
    src.add_argument("--ir-file", help="kernel in the textual IR")
    r.add_argument("--scale", help="benchmark size: tiny, desk or full")
    r.add_argument("--seed", type=int)
    r.add_argument("--args", help="comma-separated kernel arguments for --ir-file")
    r.add_argument("--memory", help="JSON file with initial contents per space (--ir-file only)")
    r.add_argument("--config", help="flat key = value configuration file")
    r.add_argument("--engines", help=f"comma-separated subset of {','.join(ENGINES)}")
    r.add_argument("--trace", action="store_true", help="write per-cycle traces and Gantt charts")
    r.add_argument("--gantt-window", help="cycle range START:END for the Gantt chart")
    r.add_argument("--out", help="output directory")
    r.add_argument("--dump-cdfg", action="store_true", help="write the dependence graph as cdfg.dot")
    r.add_argument("--max-dup-nodes", type=int)
    r.add_argument("--fifo-depth", type=int)
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="any configuration key")
    r.add_argument("--sweep", metavar="KEY=V1,V2", help="repeat the run for each value of one key")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("gantt", help="render a trace CSV as text")
    g.add_argument("trace_file")
    g.add_argument("--window", default="0:120", help="START:END cycle range")
    g.set_defaults(func=cmd_gantt)

    k = sub.add_parser("kernels", help="list built-in benchmarks")
    k.set_defaults(func=cmd_kernels)
    return ap


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    return ns.func(ns)


if __name__ == "__main__":
    sys.exit(main())
