"""Cutting the condensed CDFG into decoupled pipeline stages.

The stage walk is the classic one: visit components in topological order,
accumulate them into the current stage, and close the stage whenever the
component just added touches memory or carries a long-latency operation.

Every emitted stage program keeps the original block skeleton, minus loops
it has no business in.  Values crossing stages travel over channels; a
consumer pops a value at the top of the block that defines it, so pushes and
pops match one for one along the shared control path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import cfg
from .cdfg import DATA, MEMORD, Cdfg, CondensedDag, SccSet, build_cdfg, condense_and_sort, find_sccs
from .ir import (
    BLOCKED_POP, BLOCKED_PUSH, DONE, RUNNING, Block, Channel as IRChannel, ChannelQueue,
    Instruction, IRError, LatencyTable, Machine, MemoryImage, Program, Var, validate,
)

DEFAULT_DEPTH = 16
DEFAULT_MAX_DUP = 8


class PlanningError(RuntimeError):
    """Internal invariant violation while planning or emitting stages."""


@dataclass
class StagePlan:
    components: list[list[int]]  # component ids per stage, in walk order
    sccs: SccSet
    duplicated: set = field(default_factory=set)  # {(component, stage)}

    @property
    def stages(self) -> list[frozenset]:
        return [frozenset(n for c in comps for n in self.sccs.components[c]) for comps in self.components]

    @property
    def stage_of_comp(self) -> dict[int, int]:
        return {c: i for i, comps in enumerate(self.components) for c in comps}

    @property
    def stage_of(self) -> dict[int, int]:
        return {n: i for i, nodes in enumerate(self.stages) for n in nodes}

    def dup_components(self, stage: int) -> list[int]:
        return sorted((c for c, s in self.duplicated if s == stage), key=self.sccs.first)

    def local_nodes(self, stage: int) -> set[int]:
        nodes = set(self.stages[stage])
        for c in self.dup_components(stage):
            nodes |= self.sccs.components[c]
        return nodes

    def copy(self) -> "StagePlan":
        return StagePlan([list(c) for c in self.components], self.sccs, set(self.duplicated))


def partition(dag: CondensedDag, sccs: SccSet) -> StagePlan:
    stages: list[list[int]] = []
    current: list[int] = []
    for comp in dag.topo_order:
        current.append(comp)
        if sccs.mem_long(comp):
            stages.append(current)
            current = []
    # a trailing stage would be silently dropped by a literal reading of the walk
    if current:
        stages.append(current)
    return StagePlan(stages, sccs)


# ---------------------------------------------------------------------------
# Per-stage requirements: which blocks survive and which values arrive by channel


@dataclass
class Channel:
    id: int
    value: str  # SSA value name; order tokens use "ord.c<id>" on the consumer side
    producer: int
    consumer: int
    payload: str  # data | control | order
    depth: int
    def_node: int
    block: str

    @property
    def name(self) -> str:
        return f"c{self.id}"

    @property
    def consumer_value(self) -> str:
        return f"ord.{self.name}" if self.payload == "order" else self.value

    def record(self) -> dict:
        return {"id": self.name, "producer": self.producer, "consumer": self.consumer,
                "value": self.value, "payload": self.payload, "depth": self.depth,
                "def_node": self.def_node, "block": self.block}


@dataclass
class StageNeeds:
    local: set
    kept: list  # block labels in program order
    retarget: dict
    values: dict  # value -> "data" | "control"
    tokens: list  # memory-ordering source nodes
    collapse: dict = field(default_factory=dict)  # branch block -> jump target


def _home_stage(plan: StagePlan, stage_of: dict[int, int], p: Program, value: str) -> int | None:
    pos = p.definitions.get(value)
    return None if pos is None else stage_of[pos]


def _reaches_without_memord(g: Cdfg, src: int, dst: int) -> bool:
    succ: dict[int, list[int]] = {}
    for e in g.edges:
        if e.kind != MEMORD:
            succ.setdefault(e.src, []).append(e.dst)
    seen = {src}
    work = [src]
    while work:
        n = work.pop()
        for m in succ.get(n, ()):
            if m == dst:
                return True
            if m not in seen:
                seen.add(m)
                work.append(m)
    return False


class _Analysis:
    """Caches program-level facts reused across many candidate plans."""

    def __init__(self, g: Cdfg):
        self.g = g
        self.p = g.program
        self.preds = cfg.predecessors(self.p.succ)
        self.loops = g.loops
        self.order = [b.label for b in self.p.blocks]
        self.def_block = {name: self.p.positions[pos][1] for name, pos in self.p.definitions.items()}
        self.cdeps = cfg.control_dependences(self.p.succ)
        self.ipdom = cfg.postdominator_tree(self.p.succ)
        self._implied: dict[tuple[int, int], bool] = {}

    def implied(self, a: int, b: int) -> bool:
        key = (a, b)
        if key not in self._implied:
            self._implied[key] = _reaches_without_memord(self.g, a, b)
        return self._implied[key]

    def skeleton(self, needed: set[str]) -> tuple[list[str], dict[str, str]]:
        pruned: list[cfg.Loop] = []
        for lp in self.loops:  # outermost first
            if any(anc in pruned for anc in _ancestors(lp)):
                continue
            if lp.body & needed:
                continue
            exits = lp.exit_targets(self.p.succ)
            if len(exits) == 1:
                pruned.append(lp)
        removed: set[str] = set()
        exit_of: dict[str, str] = {}
        for lp in pruned:
            removed |= lp.body
            exit_of[lp.header] = lp.exit_targets(self.p.succ)[0]
        retarget: dict[str, str] = {}
        for h in exit_of:
            t = h
            while t in exit_of:
                t = exit_of[t]
            retarget[h] = t
        kept = [b for b in self.order if b not in removed]
        return kept, retarget


def _ancestors(lp: cfg.Loop):
    p = lp.parent
    while p is not None:
        yield p
        p = p.parent


def stage_needs(an: _Analysis, plan: StagePlan, stage: int, stage_of: dict[int, int]) -> StageNeeds:
    g, p = an.g, an.p
    local = plan.local_nodes(stage)
    resident = plan.stages[stage]
    local_values = {g.instruction(n).result for n in local if g.instruction(n).result}
    args = set(p.args)
    values: dict[str, str] = {}
    needed: set[str] = set()
    for n in local:
        ins = g.instruction(n)
        needed.add(g.block_of[n])
        if ins.opcode == "phi":
            needed.update(lbl for lbl, _ in ins.incoming)
        for v in ins.uses():
            if v not in local_values and v not in args:
                values[v] = "data"
    tokens: list[int] = []
    for e in g.edges:
        if e.kind == MEMORD and e.dst in resident and e.src not in local and stage_of[e.src] < stage:
            if e.src not in tokens and not an.implied(e.src, e.dst):
                tokens.append(e.src)
    tokens.sort()
    own_branches = {g.block_of[n] for n in local if g.instruction(n).opcode == "br"}
    while True:
        for v in values:
            needed.add(an.def_block[v])
        for t in tokens:
            needed.add(g.block_of[t])
        work = list(needed)
        while work:
            for c in an.cdeps.get(work.pop(), ()):
                if c not in needed:
                    needed.add(c)
                    work.append(c)
        controllers = {c for x in needed for c in an.cdeps.get(x, ())}
        kept, retarget = an.skeleton(needed)
        collapse: dict[str, str] = {}
        grew = False
        for lbl in kept:
            term = p.block_map[lbl].terminator
            if term.opcode != "br":
                continue
            t, f = (retarget.get(x, x) for x in term.targets)
            if t == f:
                continue
            join = an.ipdom.get(lbl)
            if lbl not in controllers and lbl not in own_branches and join in p.block_map:
                # nothing this stage needs depends on the outcome
                collapse[lbl] = retarget.get(join, join)
                continue
            cond = term.operands[0]
            if not isinstance(cond, Var):
                continue
            if cond.name in local_values or cond.name in args or cond.name in values:
                continue
            values[cond.name] = "control"
            grew = True
        if not grew:
            break
    kept = _reachable(p, kept, retarget, collapse)
    for v in values:
        home = _home_stage(plan, stage_of, p, v)
        if home is None or home >= stage:
            raise PlanningError(f"stage {stage} needs %{v} from stage {home}, which is not upstream")
    return StageNeeds(local, kept, retarget, values, tokens, collapse)


def _reachable(p: Program, kept: list[str], retarget: dict[str, str], collapse: dict[str, str]) -> list[str]:
    allowed = set(kept)
    seen = {p.entry}
    work = [p.entry]
    while work:
        b = work.pop()
        targets = [collapse[b]] if b in collapse else [retarget.get(t, t) for t in p.succ[b]]
        for t in targets:
            if t in allowed and t not in seen:
                seen.add(t)
                work.append(t)
    return [b for b in kept if b in seen]


def _all_needs(an: _Analysis, plan: StagePlan) -> list[StageNeeds]:
    stage_of = plan.stage_of
    return [stage_needs(an, plan, s, stage_of) for s in range(len(plan.components))]


def _channels_from_needs(an: _Analysis, plan: StagePlan, needs: list[StageNeeds], depth: int) -> list[Channel]:
    p, g = an.p, an.g
    stage_of = plan.stage_of
    pending = []
    for s, nd in enumerate(needs):
        for v, kind in nd.values.items():
            pos = p.definitions[v]
            pending.append((pos, s, v, kind))
        for t in nd.tokens:
            pending.append((t, s, None, "order"))
    pending.sort(key=lambda x: (x[0], x[1], x[3]))
    out = []
    for i, (pos, s, v, kind) in enumerate(pending):
        value = v if v is not None else f"order@{pos}"
        out.append(Channel(i, value, stage_of[pos], s, kind, depth, pos, g.block_of[pos]))
    return out


def insert_channels(plan: StagePlan, g: Cdfg, depth: int = DEFAULT_DEPTH) -> list[Channel]:
    an = _Analysis(g)
    return _channels_from_needs(an, plan, _all_needs(an, plan), depth)


def duplicate_cheap_sccs(plan: StagePlan, g: Cdfg, s: SccSet, max_dup_nodes: int = DEFAULT_MAX_DUP) -> StagePlan:
    """Replicate small, short-latency, memory-free components into consumer stages
    when that strictly reduces the number of channels."""
    plan = plan.copy()
    if max_dup_nodes <= 0:
        return plan
    an = _Analysis(g)
    p = g.program
    dupable = [not s.mem_long(c) and len(s.components[c]) <= max_dup_nodes for c in range(len(s.components))]
    data_preds: dict[int, list[int]] = {}
    for e in g.edges:
        if e.kind == DATA:
            data_preds.setdefault(e.dst, []).append(e.src)

    def count(pl: StagePlan) -> int:
        try:
            return sum(len(nd.values) + len(nd.tokens) for nd in _all_needs(an, pl))
        except PlanningError:
            return 1 << 30

    best = count(plan)
    tried: set = set()
    changed = True
    while changed:
        changed = False
        stage_of = plan.stage_of
        home_comp = plan.stage_of_comp
        for stage in range(len(plan.components)):
            nd = stage_needs(an, plan, stage, stage_of)
            for v in sorted(nd.values, key=lambda name: p.definitions[name]):
                comp = s.comp_of[p.definitions[v]]
                if not dupable[comp] or home_comp[comp] >= stage or (comp, stage) in tried:
                    continue
                tried.add((comp, stage))
                local = plan.local_nodes(stage)
                group = [comp]
                size = len(s.components[comp])
                work = list(s.components[comp])
                ok = True
                while work:
                    n = work.pop()
                    for pred in data_preds.get(n, ()):
                        c = s.comp_of[pred]
                        if pred in local or c in group or not dupable[c]:
                            continue
                        group.append(c)
                        size += len(s.components[c])
                        work.extend(s.components[c])
                if size > max_dup_nodes:
                    ok = False
                if not ok:
                    continue
                trial = plan.copy()
                trial.duplicated |= {(c, stage) for c in group}
                n_after = count(trial)
                if n_after < best:
                    plan, best = trial, n_after
                    changed = True
                    break
            if changed:
                break
    return plan


# ---------------------------------------------------------------------------
# Emission


def _operand_text(o) -> str:
    return str(o) if isinstance(o, Var) else repr(o) if isinstance(o, float) else str(o)


def emit_stage_programs(plan: StagePlan, channels: list[Channel], p: Program, g: Cdfg | None = None) -> list[Program]:
    g = g or build_cdfg(p)
    an = _Analysis(g)
    stage_of = plan.stage_of
    ret_stage = return_stage(plan, p)
    out = []
    for s in range(len(plan.components)):
        nd = stage_needs(an, plan, s, stage_of)
        out.append(_emit_one(an, plan, channels, nd, s, ret_stage))
    return out


def return_stage(plan: StagePlan, p: Program) -> int:
    for b in p.blocks:
        term = b.terminator
        if term.opcode == "ret" and term.operands and isinstance(term.operands[0], Var):
            pos = p.definitions.get(term.operands[0].name)
            if pos is not None:
                return plan.stage_of[pos]
    return len(plan.components) - 1


def _emit_one(an: _Analysis, plan: StagePlan, channels: list[Channel], nd: StageNeeds, s: int,
              ret_stage: int) -> Program:
    p, g = an.p, an.g
    resident = plan.stages[s]
    incoming = [c for c in channels if c.consumer == s]
    outgoing = [c for c in channels if c.producer == s]
    have = {c.consumer_value for c in incoming}
    missing = set(nd.values) - have
    if missing:
        raise PlanningError(f"stage {s} lacks channels for {sorted(missing)}")
    pops_at: dict[str, list[Channel]] = {}
    for c in sorted(incoming, key=lambda c: (c.def_node, c.id)):
        pops_at.setdefault(c.block, []).append(c)
    pushes_of: dict[int, list[Channel]] = {}
    for c in outgoing:
        pushes_of.setdefault(c.def_node, []).append(c)
    block_positions: dict[str, list] = {}
    for pos, lbl, ins in p.positions:
        block_positions.setdefault(lbl, []).append((pos, ins))
    kept = nd.kept
    retarget = nd.retarget
    local = nd.local
    local_phis: dict[str, list[Instruction]] = {}
    for lbl in kept:
        local_phis[lbl] = [ins for pos, ins in block_positions[lbl]
                           if ins.opcode == "phi" and pos in local]

    def copies(pred: str, succ: str) -> list[Instruction]:
        phis = local_phis.get(succ, [])
        if not phis:
            return []
        srcs = [dict(ph.incoming)[pred] for ph in phis]
        dests = {ph.result for ph in phis}
        clash = any(isinstance(v, Var) and v.name in dests for v in srcs) and len(phis) > 1
        if not clash:
            return [Instruction("mov", ph.result, (v,)) for ph, v in zip(phis, srcs)]
        tmp = [Instruction("mov", ph.result + ".pc", (v,)) for ph, v in zip(phis, srcs)]
        return tmp + [Instruction("mov", ph.result, (Var(ph.result + ".pc"),)) for ph in phis]

    blocks: list[Block] = []
    for lbl in kept:
        extra: list[Block] = []
        body: list[Instruction] = []
        for c in pops_at.get(lbl, []):
            body.append(Instruction("pop", c.consumer_value, channel=c.name))
        src = block_positions[lbl]
        for pos, ins in src:
            if ins.opcode == "phi":
                if pos in resident:
                    body += [_push(c, ins) for c in pushes_of.get(pos, [])]
                continue
            if ins.is_terminator:
                break
            if pos in local:
                body.append(Instruction(ins.opcode, ins.result, ins.operands, ins.space, ins.channel,
                                        ins.incoming, ins.cmp, ins.targets))
                if pos in resident:
                    body += [_push(c, ins) for c in pushes_of.get(pos, [])]
        term_pos, term = src[-1]
        if term.opcode == "ret":
            if s == ret_stage and term.operands:
                body.append(Instruction("ret", None, term.operands))
            else:
                body.append(Instruction("ret", None, ()))
        elif term.opcode == "jmp" or lbl in nd.collapse:
            tgt = nd.collapse.get(lbl) or retarget.get(term.targets[0], term.targets[0])
            body += copies(lbl, tgt)
            body.append(Instruction("jmp", None, targets=(tgt,)))
        else:
            t, f = (retarget.get(x, x) for x in term.targets)
            if term_pos in resident:
                body += [_push(c, term) for c in pushes_of.get(term_pos, [])]
            if t == f:
                body += copies(lbl, t)
                body.append(Instruction("jmp", None, targets=(t,)))
            else:
                targets = []
                for tgt in (t, f):
                    cp = copies(lbl, tgt)
                    if cp:
                        split = f"{lbl}.to.{tgt}"
                        extra.append(Block(split, tuple(cp + [Instruction("jmp", None, targets=(tgt,))])))
                        targets.append(split)
                    else:
                        targets.append(tgt)
                body.append(Instruction("br", None, term.operands, targets=tuple(targets)))
        blocks.append(Block(lbl, tuple(body)))
        blocks += extra
    ordered = blocks
    used_spaces = {ins.space for b in ordered for ins in b.instructions if ins.space}
    spaces = tuple(sp for sp in p.spaces if sp.name in used_spaces)
    used = sorted({c.id for c in incoming} | {c.id for c in outgoing})
    chans = tuple(IRChannel(f"c{i}", channels[i].depth) for i in used)
    return Program(f"{p.name}.s{s}", p.args, spaces, tuple(ordered), chans)


def _push(c: Channel, ins: Instruction) -> Instruction:
    if c.payload == "order":
        return Instruction("push", None, (0,), channel=c.name)
    return Instruction("push", None, (Var(c.value),), channel=c.name)


# ---------------------------------------------------------------------------
# Bundled result


@dataclass
class Pipeline:
    program: Program
    cdfg: Cdfg
    sccs: SccSet
    dag: CondensedDag
    plan: StagePlan
    channels: list[Channel]
    stages: list[Program]
    ret_stage: int
    table: LatencyTable

    def manifest(self) -> dict:
        from .sim import compute_ii  # local import: sim depends on this module

        plan = self.plan
        stages = []
        for i, comps in enumerate(plan.components):
            stages.append({
                "index": i,
                "program": f"{self.stages[i].name}.ir",
                "components": [sorted(self.sccs.components[c]) for c in comps],
                "duplicated": [sorted(self.sccs.components[c]) for c in plan.dup_components(i)],
                "nodes": sorted(plan.stages[i]),
                "ii": compute_ii(plan.stages[i], self.sccs, self.table, self.cdfg),
            })
        return {
            "kernel": self.program.name,
            "ret_stage": self.ret_stage,
            "stages": stages,
            "channels": [c.record() for c in self.channels],
        }

    def manifest_text(self) -> str:
        return json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n"


def build_pipeline(p: Program, table: LatencyTable | None = None, max_dup_nodes: int = DEFAULT_MAX_DUP,
                   depth: int = DEFAULT_DEPTH) -> Pipeline:
    table = table or LatencyTable.default()
    g = build_cdfg(p)
    sccs = find_sccs(g, table)
    dag = condense_and_sort(g, sccs)
    plan = partition(dag, sccs)
    plan = duplicate_cheap_sccs(plan, g, sccs, max_dup_nodes)
    channels = insert_channels(plan, g, depth)
    stages = emit_stage_programs(plan, channels, p, g)
    return Pipeline(p, g, sccs, dag, plan, channels, stages, return_stage(plan, p), table)


# ---------------------------------------------------------------------------
# Invariant checks


def check_plan(plan: StagePlan, g: Cdfg, channels: list[Channel] | None = None) -> list[str]:
    """Return human-readable violations of the stage-plan invariants (empty if fine)."""
    s = plan.sccs
    bad: list[str] = []
    stage_of = plan.stage_of
    all_nodes = set(g.nodes)
    covered = [n for st in plan.stages for n in st]
    if len(covered) != len(set(covered)) or set(covered) != all_nodes:
        bad.append("stages do not partition the node set")
    for c, comp in enumerate(s.components):
        homes = {stage_of[n] for n in comp}
        if len(homes) != 1:
            bad.append(f"component {c} split across stages {sorted(homes)}")
    for e in g.edges:
        if stage_of[e.src] > stage_of[e.dst]:
            bad.append(f"edge {e.src}->{e.dst} goes backward")
    last = len(plan.components) - 1
    for i, comps in enumerate(plan.components):
        closers = [c for c in comps if s.mem_long(c)]
        if i < last or closers:
            if len(closers) != 1:
                bad.append(f"stage {i} has {len(closers)} memory/long components")
            elif comps[-1] != closers[0]:
                bad.append(f"stage {i} does not end with its memory/long component")
    n_ml = sum(1 for c in range(len(s.components)) if s.mem_long(c))
    trailing = 0 if plan.components and s.mem_long(plan.components[-1][-1]) else 1
    if len(plan.components) != n_ml + trailing:
        bad.append("stage count differs from memory/long component count")
    for c, st in plan.duplicated:
        if s.mem_long(c):
            bad.append(f"memory/long component {c} duplicated")
    for ch in channels or ():
        if not ch.producer < ch.consumer:
            bad.append(f"channel {ch.name} not strictly forward")
        if ch.depth < 1:
            bad.append(f"channel {ch.name} depth < 1")
    if channels:
        keys = [(ch.value, ch.consumer) for ch in channels]
        if len(keys) != len(set(keys)):
            bad.append("duplicate (value, consumer) channel")
    return bad


# ---------------------------------------------------------------------------
# Queue-semantics interpreter


@dataclass
class StageRun:
    memory: MemoryImage
    value: object
    traces: list
    queues: dict


def run_stages(stages: list[Program], channels: list[Channel], memory: MemoryImage, args=(),
               ret_stage: int | None = None, capacity: int | None = None, quantum: int = 256,
               fuel: int = 200_000_000) -> StageRun:
    """Interleave stage programs round-robin over shared memory and FIFO queues.

    ``capacity`` bounds every queue (None means each channel's own depth).
    """
    mem = memory.copy()
    queues = {c.name: ChannelQueue(c.name, capacity if capacity is not None else c.depth) for c in channels}
    machines = []
    for prog in stages:
        own = {c.name: queues[c.name] for c in prog.channels}
        machines.append(Machine(prog, mem, args, channels=own))
    producers: dict[int, list[str]] = {}
    for c in channels:
        producers.setdefault(c.producer, []).append(c.name)
    spent = 0
    while True:
        progressed = False
        alive = False
        for i, m in enumerate(machines):
            if m.state == DONE:
                continue
            before = m.steps
            state = m.run(quantum)
            if m.steps != before:
                progressed = True
            if state == DONE:
                for name in producers.get(i, ()):
                    queues[name].closed = True
            else:
                alive = True
            spent += m.steps - before
        if not alive:
            break
        if spent > fuel:
            raise IRError("queue interpreter ran out of fuel")
        if not progressed:
            blocked = [f"{m.program.name}" for m in machines if m.state != DONE]
            raise IRError(f"queue interpreter deadlock: {', '.join(blocked)}")
    for q in queues.values():
        if q.items:
            raise IRError(f"channel {q.name} left {len(q.items)} undelivered tokens")
    r = ret_stage if ret_stage is not None else len(stages) - 1
    return StageRun(mem, machines[r].result, [m.trace for m in machines], queues)
