"""Instruction-level control/data-flow graph, SCCs and the condensed DAG.

Nodes are instruction positions (index into ``Program.positions``): every
non-terminator instruction plus every conditional branch.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from . import cfg
from .ir import CONTROL, LatencyTable, Program

DATA, CONTROL_EDGE, MEMORD = "data", "control", "memord"
EXACT_CYCLE_LIMIT = 12


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    kind: str
    loop_carried: bool = False


@dataclass
class Cdfg:
    program: Program
    nodes: list[int]
    edges: list[Edge]
    block_of: dict[int, str]
    loops: list[cfg.Loop]
    succ: dict[int, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.succ:
            self.succ = {n: [] for n in self.nodes}
            for e in self.edges:
                if e.dst not in self.succ[e.src]:
                    self.succ[e.src].append(e.dst)

    def instruction(self, node: int):
        return self.program.positions[node][2]

    def label(self, node: int) -> str:
        ins = self.instruction(node)
        return f"%{ins.result}" if ins.result else ins.opcode

    def dump(self) -> str:
        lines = [f"digraph {self.program.name} {{"]
        for n in self.nodes:
            ins = self.instruction(n)
            lines.append(f'  n{n} [label="{str(ins)}" block="{self.block_of[n]}"]')
        for e in self.edges:
            lines.append(f"  n{e.src} -> n{e.dst} [{e.kind}, {'carried' if e.loop_carried else 'intra'}]")
        lines.append("}")
        return "\n".join(lines) + "\n"


def _loops_containing(loops: list[cfg.Loop], block: str) -> set[str]:
    return {lp.header for lp in loops if block in lp.body}


def build_cdfg(p: Program) -> Cdfg:
    """Data edges from SSA, control edges from control dependence, memory-ordering
    edges between same-space accesses where at least one side is a store."""
    succ = p.succ
    idom = cfg.immediate_dominators(succ, p.entry)
    loops = cfg.find_loops(succ, p.entry)
    nodes: list[int] = []
    block_of: dict[int, str] = {}
    branch_of: dict[str, int] = {}
    for pos, label, ins in p.positions:
        if ins.opcode in CONTROL and ins.opcode != "br":
            continue
        nodes.append(pos)
        block_of[pos] = label
        if ins.opcode == "br":
            branch_of[label] = pos
    defs = p.definitions
    edges: list[Edge] = []
    seen: set[tuple[int, int, str]] = set()

    def add(src: int, dst: int, kind: str, carried: bool) -> None:
        key = (src, dst, kind)
        if key not in seen:
            seen.add(key)
            edges.append(Edge(src, dst, kind, carried))

    for n in nodes:
        ins = p.positions[n][2]
        if ins.opcode == "phi":
            here = block_of[n]
            for lbl, val in ins.incoming:
                if hasattr(val, "name") and val.name in defs:
                    add(defs[val.name], n, DATA, cfg.dominates(idom, here, lbl))
        else:
            for name in ins.uses():
                if name in defs:
                    add(defs[name], n, DATA, False)

    deps = cfg.control_dependences(succ)
    by_block: dict[str, list[int]] = {}
    for n in nodes:
        by_block.setdefault(block_of[n], []).append(n)
    for block, controllers in deps.items():
        for ctl in sorted(controllers, key=lambda b: branch_of.get(b, -1)):
            br = branch_of.get(ctl)
            if br is None:
                continue
            carried = cfg.dominates(idom, block, ctl)
            for n in by_block.get(block, ()):
                add(br, n, CONTROL_EDGE, carried)

    # A phi also depends on every branch that decides which incoming edge is
    # taken, even when its block postdominates those branches.
    for n in nodes:
        ins = p.positions[n][2]
        if ins.opcode != "phi" or len(ins.incoming) < 2:
            continue
        here = block_of[n]
        region = idom.get(here, here)
        for lbl, _ in ins.incoming:
            carried = cfg.dominates(idom, here, lbl)
            deciding = {lbl} if lbl in branch_of else set()
            work = [lbl]
            while work:
                for ctl in deps.get(work.pop(), ()):
                    if ctl not in deciding and cfg.dominates(idom, region, ctl):
                        deciding.add(ctl)
                        work.append(ctl)
            for ctl in sorted(deciding, key=lambda b: branch_of.get(b, -1)):
                if ctl in branch_of:
                    add(branch_of[ctl], n, CONTROL_EDGE, carried)

    for space in p.spaces:
        if space.readonly:
            continue
        accesses = [n for n in nodes
                    if p.positions[n][2].opcode in ("load", "store") and p.positions[n][2].space == space.name]
        carried_ok = "no_loop_carried" not in space.annotations
        for i, a in enumerate(accesses):
            for b in accesses[i + 1:]:
                if p.positions[a][2].opcode != "store" and p.positions[b][2].opcode != "store":
                    continue
                add(a, b, MEMORD, False)
                if carried_ok and (_loops_containing(loops, block_of[a]) & _loops_containing(loops, block_of[b])):
                    add(b, a, MEMORD, True)
    return Cdfg(p, nodes, edges, block_of, loops)


@dataclass
class SccSet:
    components: list[frozenset]
    comp_of: dict[int, int]
    has_mem: list[bool]
    has_long: list[bool]
    cyclic: list[bool]
    cycle_latency: list[int]

    def mem_long(self, c: int) -> bool:
        return self.has_mem[c] or self.has_long[c]

    def first(self, c: int) -> int:
        return min(self.components[c])


def _tarjan(nodes: list[int], succ: dict[int, list[int]]) -> list[list[int]]:
    index: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    out: list[list[int]] = []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        work = [(root, 0)]
        while work:
            v, i = work.pop()
            if i == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack.add(v)
            recurse = False
            targets = succ.get(v, [])
            while i < len(targets):
                w = targets[i]
                i += 1
                if w not in index:
                    work.append((v, i))
                    work.append((w, 0))
                    recurse = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if recurse:
                continue
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                out.append(sorted(comp))
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
    return out


def node_latency(g: Cdfg, n: int, table: LatencyTable) -> int:
    op = g.instruction(n).opcode
    return 0 if op in CONTROL else table[op][0]


def max_cycle_latency(members: list[int], succ: dict[int, list[int]], weight: dict[int, int]) -> int:
    """Heaviest simple cycle, by exhaustive search rooted at each member's lowest index."""
    member_set = set(members)
    order = {n: i for i, n in enumerate(sorted(members))}
    best = 0
    for start in sorted(members):
        rank = order[start]
        stack = [(start, iter(succ.get(start, ())), weight[start])]
        on_path = {start}
        while stack:
            node, it, total = stack[-1]
            advanced = False
            for w in it:
                if w not in member_set or order[w] < rank:
                    continue
                if w == start:
                    best = max(best, total)
                elif w not in on_path:
                    on_path.add(w)
                    stack.append((w, iter(succ.get(w, ())), total + weight[w]))
                    advanced = True
                    break
            if not advanced:
                stack.pop()
                on_path.discard(node)
    return best


def find_sccs(g: Cdfg, table: LatencyTable | None = None) -> SccSet:
    table = table or LatencyTable.default()
    comps = _tarjan(g.nodes, g.succ)
    comps.sort(key=min)
    components = [frozenset(c) for c in comps]
    comp_of = {n: i for i, c in enumerate(components) for n in c}
    has_mem, has_long, cyclic, lat = [], [], [], []
    weight = {n: node_latency(g, n, table) for n in g.nodes}
    # Control edges order the graph but are speculated through in a pipelined
    # loop, so only data and memory-ordering edges form recurrences.
    recur: dict[int, list[int]] = {n: [] for n in g.nodes}
    for e in g.edges:
        if e.kind != CONTROL_EDGE and e.dst not in recur[e.src]:
            recur[e.src].append(e.dst)
    for c in comps:
        ops = [g.instruction(n).opcode for n in c]
        has_mem.append(any(op in ("load", "store") for op in ops))
        has_long.append(any(op not in CONTROL and table[op][0] > 1 for op in ops))
        is_cyclic = len(c) > 1 or c[0] in g.succ.get(c[0], ())
        cyclic.append(is_cyclic)
        if not is_cyclic:
            lat.append(0)
        elif len(c) <= EXACT_CYCLE_LIMIT:
            lat.append(max_cycle_latency(c, recur, weight))
        else:
            lat.append(sum(weight[n] for n in c))
    return SccSet(components, comp_of, has_mem, has_long, cyclic, lat)


class CondensationError(RuntimeError):
    pass


@dataclass
class CondensedDag:
    succ: dict[int, list[int]]
    preds: dict[int, list[int]]
    topo_order: list[int]


def condense_and_sort(g: Cdfg, s: SccSet) -> CondensedDag:
    """Collapse components; Kahn's algorithm with ties broken by earliest member position."""
    n = len(s.components)
    succ: dict[int, list[int]] = {c: [] for c in range(n)}
    preds: dict[int, list[int]] = {c: [] for c in range(n)}
    for e in g.edges:
        a, b = s.comp_of[e.src], s.comp_of[e.dst]
        if a != b and b not in succ[a]:
            succ[a].append(b)
            preds[b].append(a)
    for c in succ:
        succ[c].sort(key=s.first)
        preds[c].sort(key=s.first)
    indeg = {c: len(preds[c]) for c in range(n)}
    heap = [(s.first(c), c) for c in range(n) if indeg[c] == 0]
    heapq.heapify(heap)
    order: list[int] = []
    while heap:
        _, c = heapq.heappop(heap)
        order.append(c)
        for d in succ[c]:
            indeg[d] -= 1
            if indeg[d] == 0:
                heapq.heappush(heap, (s.first(d), d))
    if len(order) != n:
        raise CondensationError("cycle among condensed components")
    return CondensedDag(succ, preds, order)


def is_topological(dag: CondensedDag) -> bool:
    where = {c: i for i, c in enumerate(dag.topo_order)}
    return all(where[a] < where[b] for a, outs in dag.succ.items() for b in outs)
