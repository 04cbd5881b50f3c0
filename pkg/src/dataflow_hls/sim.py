"""Cycle-approximate simulation of the monolithic and decoupled engines.

Stages are initiation-interval engines: every entry into a loop header waits
until ``II`` cycles after the previous one, while straight-line work between
headers costs no extra cycles.  Loads issue without blocking; the stage
stalls only when a value that is still in flight gets used.  A pushed value
may still be in flight, in which case the FIFO entry becomes visible to the
consumer one cycle after the data returns.

The monolithic engine is the same machinery applied to the whole kernel as a
single stage, except that its memory interface issues one element per
request: only a decoupled access stream can be turned into bursts.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

from .cdfg import Cdfg, SccSet
from .ir import IRError, LatencyTable, MemoryImage, Program, Trap
from .memory import CACHED, MemConfig, MemorySystem, coalesce_index
from .partition import Pipeline, StagePlan, emit_stage_programs, run_stages
from .stagegen import compile_stage

BUSY, MEM, FIFO_FULL, FIFO_EMPTY, IDLE = "busy", "mem", "fifo_full", "fifo_empty", "idle"
STATES = (BUSY, MEM, FIFO_FULL, FIFO_EMPTY, IDLE)


class DeadlockError(RuntimeError):
    def __init__(self, cycle: int, blocked: list[str]):
        self.cycle = cycle
        self.blocked = blocked
        super().__init__(f"deadlock at cycle {cycle}: " + ", ".join(blocked))


class FunctionalMismatch(RuntimeError):
    pass


def compute_ii(nodes, sccs: SccSet, table: LatencyTable, g: Cdfg | None = None) -> int:
    """Initiation interval of a stage: the slowest resident recurrence, at least 1.

    Non-pipelined operators also bound the interval by their own latency.
    """
    nodes = set(nodes)
    ii = 1
    for c, comp in enumerate(sccs.components):
        if comp & nodes:
            ii = max(ii, sccs.cycle_latency[c])
    if g is not None:
        for n in nodes:
            op = g.instruction(n).opcode
            if op in table and not table[op][1]:
                ii = max(ii, table[op][0])
    return ii


# ---------------------------------------------------------------------------
# FIFOs


class Fifo:
    __slots__ = ("name", "capacity", "items", "pushes", "pops", "hist", "_since", "closed")

    def __init__(self, name: str, capacity: int):
        self.name = name
        self.capacity = capacity
        self.items: deque = deque()  # (value, request id or None, push cycle)
        self.pushes = 0
        self.pops = 0
        self.hist: dict[int, int] = {}
        self._since = 0
        self.closed = False

    def _mark(self, now: int) -> None:
        if now > self._since:
            occ = len(self.items)
            self.hist[occ] = self.hist.get(occ, 0) + now - self._since
            self._since = now

    def push(self, now: int, value, rid) -> None:
        self._mark(now)
        self.items.append((value, rid, now))
        self.pushes += 1

    def pop(self, now: int):
        self._mark(now)
        self.pops += 1
        return self.items.popleft()[0]

    def report(self, end: int) -> dict:
        self._mark(end)
        return {"id": self.name, "capacity": self.capacity, "pushes": self.pushes, "pops": self.pops,
                "occupancy_histogram": {str(k): v for k, v in sorted(self.hist.items())}}


# ---------------------------------------------------------------------------
# Burst ports


class BurstPort:
    """Replays a stage's pre-computed access stream for one streaming space."""

    def __init__(self, trace, burst_max: int, prefetch: int):
        self.trace = trace
        self.reqs, self.owner = coalesce_index(trace, burst_max)
        self.prefetch = prefetch
        self.k = 0
        self.rid: dict[int, int] = {}  # request index -> memory request id
        self.next_issue = 0


# ---------------------------------------------------------------------------
# Stage engine


class StageEngine:
    """Timing wrapper around one compiled stage program."""

    def __init__(self, index: int, program: Program, ii: int, memsys: MemorySystem,
                 memory: MemoryImage, args, fifos: dict[str, Fifo], policies: dict[str, str],
                 bursts: dict[str, BurstPort] | None = None):
        self.index = index
        self.name = program.name
        self.program = program
        self.ii = ii
        self.mem = memsys
        self.policies = policies
        self.bursts = bursts or {}
        self.done = False
        self.result = None
        self.iterations = 0
        self.instructions = 0
        self.stats = {s: 0 for s in STATES}
        self.status = BUSY
        self.wake: int | None = None
        self.out_fifos: list[Fifo] = []
        args = list(args)
        if len(args) != len(program.args):
            raise IRError(f"{program.name} expects {len(program.args)} arguments, got {len(args)}")
        self._gen = compile_stage(program, ii)(self, memory.arrays, fifos, args)
        next(self._gen)

    # -- hooks called from the generated code --------------------------------

    def trap(self, space: str, addr) -> None:
        raise Trap(f"out-of-bounds access {space}[{addr}] in {self.name}")

    def request(self, space: str, addr: int, kind: str, now: int):
        """Issue (or attach to a burst covering) one access; None when rejected."""
        port = self.bursts.get(space)
        if port is not None:
            k = port.k
            if k < len(port.trace) and port.trace[k][1] == addr and port.trace[k][2] == kind:
                r = port.owner[k]
                limit = r + port.prefetch if kind == "R" else r
                while port.next_issue <= limit and port.next_issue < len(port.reqs):
                    j = port.next_issue
                    spec = port.reqs[j]
                    if j > r and spec.kind != "R":
                        break
                    req = self.mem.new_request(spec.space, spec.start, spec.length, spec.kind,
                                               port=(self.index, space), cached=False)
                    if not self.mem.issue(req, now):
                        break
                    port.rid[j] = req.id
                    port.next_issue += 1
                if r not in port.rid:
                    return None
                port.k += 1
                return port.rid[r]
            port.k = len(port.trace) + 1  # stream diverged from the replay; fall back
        out = self.mem.submit(space, addr, 1, (self.index, space), self.policies[space] == CACHED, now)
        return None if out is None else out[0]

    def ready(self, rid: int, now: int):
        """True once request ``rid`` has been delivered, else its delivery cycle if known."""
        delivered = self.mem.delivered
        at = delivered.get(rid)
        if at is None:
            self.mem.tick(now)
            at = delivered.get(rid)
        if at is not None and at <= now:
            return True
        return at

    def pop_wait(self, q: Fifo, now: int):
        """True when the head of ``q`` is visible at ``now``, else a wake cycle or None."""
        if not q.items:
            if q.closed:
                raise IRError(f"{self.name} popped drained channel {q.name}")
            return None
        _, rid, pushed = q.items[0]
        visible = pushed + 1
        if rid is not None:
            at = self.ready(rid, now)
            if at is not True:
                return at
            visible = max(visible, self.mem.delivered[rid] + 1)
        return True if visible <= now else visible

    def finish(self, result, iterations: int, instructions: int) -> None:
        self.result = result
        self.iterations = iterations
        self.instructions = instructions

    # -- driver ---------------------------------------------------------------

    def step(self, now: int) -> bool:
        """Advance as far as possible within cycle ``now``.  Returns True on progress."""
        if self.done:
            self.status, self.wake = IDLE, None
            return False
        try:
            self.status, self.wake, moved = self._gen.send(now)
        except StopIteration:
            self.done = True
            for q in self.out_fifos:
                q.closed = True
            self.status, self.wake = BUSY, None
            return True
        return moved


# ---------------------------------------------------------------------------
# Reports


@dataclass
class SimReport:
    engine: str
    total_cycles: int
    stages: list
    fifos: list
    memory: dict
    digest: str
    return_value: object
    config: dict = field(default_factory=dict)
    image: MemoryImage | None = None
    trace_rows: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"engine": self.engine, "total_cycles": self.total_cycles, "stages": self.stages,
                "fifos": self.fifos, "memory": self.memory,
                "outputs": {"digest": self.digest, "return_value": self.return_value},
                "config": self.config}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def trace_csv(self) -> str:
        lines = ["cycle,stage,state"]
        lines += [f"{c},{s},{st}" for c, s, st in self.trace_rows]
        return "\n".join(lines) + "\n"


def _run(engines: list[StageEngine], memsys: MemorySystem, limit: int, max_cycles: int) -> tuple[int, list]:
    """Global clock loop.  Returns the total cycle count and up to ``limit`` trace rows."""
    n = len(engines)
    state = [BUSY] * n
    since = [0] * n
    changes: list[tuple[int, int, str]] = [(0, i, BUSY) for i in range(n)]
    horizon = -(-limit // n) if limit else 0  # cycles covered by the trace

    def mark(i: int, st: str, t: int) -> None:
        if st != state[i]:
            engines[i].stats[state[i]] += t - since[i]
            state[i], since[i] = st, t
            if t < horizon:
                changes.append((t, i, st))

    tick = memsys.tick
    next_event = memsys.next_event
    now = 0
    live = n
    while True:
        tick(now)
        moved = [False] * n
        for i, e in enumerate(engines):
            if e.done or (e.status == BUSY and e.wake is not None and e.wake > now):
                continue
            if e.step(now):
                moved[i] = True
                if e.done:
                    live -= 1
        if not live:
            end = now + 1
            for i in range(n):
                mark(i, BUSY if moved[i] else IDLE, now)
            break
        any_moved = True in moved
        if any_moved and any(e.wake is None and e.status in (FIFO_FULL, FIFO_EMPTY)
                             for e in engines if not e.done):
            nxt = now + 1  # a FIFO touched this cycle may unblock a neighbour
        else:
            nxt = None
            for e in engines:
                w = e.wake
                if w is not None and w > now and not e.done and (nxt is None or w < nxt):
                    nxt = w
            ev = next_event()
            if ev is not None:
                ev = ev if ev > now else now + 1
                if nxt is None or ev < nxt:
                    nxt = ev
            if nxt is None:
                if not any_moved:
                    raise DeadlockError(now, [f"{e.name}:{e.status}" for e in engines if not e.done])
                nxt = now + 1
        for i, e in enumerate(engines):
            st = IDLE if e.done else e.status
            if moved[i]:
                mark(i, BUSY, now)
                mark(i, st, now + 1)
            else:
                mark(i, st, now)
        now = nxt
        if now > max_cycles:
            raise DeadlockError(now, ["cycle limit exceeded"])
    for i, e in enumerate(engines):
        e.stats[state[i]] += end - since[i]
    memsys.finish(end)
    return end, _expand(changes, n, min(end, horizon), limit)


def _expand(changes: list, n: int, cycles: int, limit: int) -> list:
    if not limit:
        return []
    rows = []
    current = [IDLE] * n
    changes = sorted(changes)
    k = 0
    for c in range(cycles):
        while k < len(changes) and changes[k][0] <= c:
            _, i, st = changes[k]
            current[i] = st
            k += 1
        rows += [(c, i, current[i]) for i in range(n)]
    return rows[:limit]


def _stage_report(e: StageEngine, total: int) -> dict:
    return {"index": e.index, "name": e.name, "ii": e.ii, "iterations": e.iterations,
            "instructions": e.instructions, "cycles": dict(e.stats),
            "utilization": round(e.stats[BUSY] / total, 6) if total else 0.0}


def _policies(p: Program, cfg_: MemConfig) -> dict[str, str]:
    return {sp.name: cfg_.policy(sp) for sp in p.spaces}


MAX_CYCLES = 2_000_000_000


def monolithic_program(p: Program, table: LatencyTable | None = None) -> tuple[Program, int]:
    """The kernel as one phi-free stage, with its initiation interval."""
    from .cdfg import build_cdfg, condense_and_sort, find_sccs

    table = table or LatencyTable.default()
    g = build_cdfg(p)
    s = find_sccs(g, table)
    dag = condense_and_sort(g, s)
    plan = StagePlan([list(dag.topo_order)], s)
    prog = emit_stage_programs(plan, [], p, g)[0]
    prog = Program(p.name, prog.args, prog.spaces, prog.blocks, prog.channels)
    return prog, compute_ii(g.nodes, s, table, g)


def simulate_monolithic(p: Program, mem_cfg: MemConfig, memory: MemoryImage, args=(),
                        table: LatencyTable | None = None, trace_limit: int = 0) -> SimReport:
    """One engine, element-wise memory requests, the slowest recurrence as II."""
    prog, ii = monolithic_program(p, table)
    image = memory.copy()
    memsys = MemorySystem(mem_cfg, p.spaces)
    eng = StageEngine(0, prog, ii, memsys, image, args, {}, _policies(p, mem_cfg))
    total, rows = _run([eng], memsys, trace_limit, MAX_CYCLES)
    return SimReport("monolithic", total, [_stage_report(eng, total)], [], memsys.stats(),
                     image.digest(), eng.result, mem_cfg.as_dict(), image, rows)


def simulate_pipeline(pipe: Pipeline, mem_cfg: MemConfig, memory: MemoryImage, args=(),
                      trace_limit: int = 0) -> SimReport:
    """Decoupled stages over bounded FIFOs; streaming spaces replay as bursts."""
    p = pipe.program
    policies = _policies(p, mem_cfg)
    streamed = len(pipe.stages) > 1 and any(pol != CACHED for pol in policies.values())
    pre = run_stages(pipe.stages, pipe.channels, memory, args, pipe.ret_stage) if streamed else None
    image = memory.copy()
    memsys = MemorySystem(mem_cfg, p.spaces)
    fifos = {c.name: Fifo(c.name, c.depth) for c in pipe.channels}
    engines = []
    for i, prog in enumerate(pipe.stages):
        ports = {}
        for space, pol in policies.items():
            # a lone stage has no decoupled address stream to replay as bursts
            if pol != CACHED and streamed:
                stream = [t for t in pre.traces[i] if t[0] == space]
                if stream:
                    ports[space] = BurstPort(stream, mem_cfg.burst_max, mem_cfg.burst_prefetch)
        ii = compute_ii(pipe.plan.stages[i], pipe.sccs, pipe.table, pipe.cdfg)
        e = StageEngine(i, prog, ii, memsys, image, args, fifos, policies, ports)
        e.out_fifos = [fifos[c.name] for c in pipe.channels if c.producer == i]
        engines.append(e)
    total, rows = _run(engines, memsys, trace_limit, MAX_CYCLES)
    for q in fifos.values():
        if q.items:
            raise IRError(f"channel {q.name} holds {len(q.items)} tokens after completion")
    return SimReport("pipeline", total, [_stage_report(e, total) for e in engines],
                     [q.report(total) for q in fifos.values()], memsys.stats(), image.digest(),
                     engines[pipe.ret_stage].result, mem_cfg.as_dict(), image, rows)


@dataclass
class SpeedupSummary:
    kernel: str
    monolithic_cycles: int
    pipeline_cycles: int
    speedup: float
    digest: str

    def to_dict(self) -> dict:
        return {"kernel": self.kernel, "monolithic_cycles": self.monolithic_cycles,
                "pipeline_cycles": self.pipeline_cycles, "speedup": round(self.speedup, 6),
                "digest": self.digest}


def compare(kernel: str, mono: SimReport, pipe: SimReport) -> SpeedupSummary:
    if mono.digest != pipe.digest:
        raise FunctionalMismatch(f"{kernel}: output digests differ ({mono.digest} vs {pipe.digest})")
    return SpeedupSummary(kernel, mono.total_cycles, pipe.total_cycles,
                          mono.total_cycles / pipe.total_cycles, mono.digest)
