"""Control-flow graph utilities shared by validation, analysis and emission.

Graphs are plain ``dict[label, list[label]]`` successor maps.  Everything here
is deterministic: iteration follows the insertion order of the input map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

EXIT = "<exit>"


def predecessors(succ: dict[str, list[str]]) -> dict[str, list[str]]:
    preds: dict[str, list[str]] = {b: [] for b in succ}
    for b, targets in succ.items():
        for t in targets:
            if t in preds and b not in preds[t]:
                preds[t].append(b)
    return preds


def reverse_postorder(succ: dict[str, list[str]], entry: str) -> list[str]:
    seen = {entry}
    order: list[str] = []
    stack = [(entry, iter(succ.get(entry, ())))]
    while stack:
        node, it = stack[-1]
        for nxt in it:
            if nxt not in seen and nxt in succ:
                seen.add(nxt)
                stack.append((nxt, iter(succ.get(nxt, ()))))
                break
        else:
            stack.pop()
            order.append(node)
    order.reverse()
    return order


def immediate_dominators(succ: dict[str, list[str]], entry: str) -> dict[str, str]:
    """Cooper/Harvey/Kennedy iterative dominators.  Unreachable nodes are absent.

    The entry maps to itself.
    """
    rpo = reverse_postorder(succ, entry)
    index = {b: i for i, b in enumerate(rpo)}
    preds = predecessors(succ)
    idom: dict[str, str] = {entry: entry}

    def intersect(a: str, b: str) -> str:
        while a != b:
            while index[a] > index[b]:
                a = idom[a]
            while index[b] > index[a]:
                b = idom[b]
        return a

    changed = True
    while changed:
        changed = False
        for b in rpo[1:]:
            new = None
            for p in preds[b]:
                if p in idom:
                    new = p if new is None else intersect(p, new)
            if new is not None and idom.get(b) != new:
                idom[b] = new
                changed = True
    return idom


def dominates(idom: dict[str, str], a: str, b: str) -> bool:
    """True if ``a`` dominates ``b`` (reflexive)."""
    while True:
        if a == b:
            return True
        parent = idom.get(b)
        if parent is None or parent == b:
            return False
        b = parent


def postdominator_tree(succ: dict[str, list[str]]) -> dict[str, str]:
    """Immediate post-dominators, using a virtual ``EXIT`` fed by every sink."""
    rev: dict[str, list[str]] = {EXIT: []}
    for b in succ:
        rev.setdefault(b, [])
    for b, targets in succ.items():
        if not targets:
            rev[EXIT].append(b)
        for t in targets:
            rev[t].append(b)
    return immediate_dominators(rev, EXIT)


def control_dependences(succ: dict[str, list[str]]) -> dict[str, set[str]]:
    """Map block -> set of blocks whose terminating branch it is control dependent on.

    Classic Ferrante/Ottenstein/Warren construction over the post-dominator tree.
    """
    ipdom = postdominator_tree(succ)
    deps: dict[str, set[str]] = {b: set() for b in succ}
    for a, targets in succ.items():
        if len(set(targets)) < 2:
            continue
        stop = ipdom.get(a)
        for b in targets:
            runner = b
            while runner != stop and runner != EXIT and runner is not None:
                deps[runner].add(a)
                nxt = ipdom.get(runner)
                if nxt == runner:
                    break
                runner = nxt
    return deps


@dataclass
class Loop:
    header: str
    body: set[str]
    parent: "Loop | None" = None
    children: list["Loop"] = field(default_factory=list)

    @property
    def depth(self) -> int:
        d, p = 1, self.parent
        while p is not None:
            d, p = d + 1, p.parent
        return d

    def exit_targets(self, succ: dict[str, list[str]]) -> list[str]:
        out: list[str] = []
        for b in succ:
            if b in self.body:
                for t in succ[b]:
                    if t not in self.body and t not in out:
                        out.append(t)
        return out


class IrreducibleError(ValueError):
    pass


def find_loops(succ: dict[str, list[str]], entry: str) -> list[Loop]:
    """Natural loops, outermost first in block order.  Raises on irreducible flow."""
    idom = immediate_dominators(succ, entry)
    rpo = reverse_postorder(succ, entry)
    index = {b: i for i, b in enumerate(rpo)}
    preds = predecessors(succ)
    bodies: dict[str, set[str]] = {}
    for b in rpo:
        for t in succ[b]:
            if t not in index:
                continue
            if index[t] <= index[b]:
                if not dominates(idom, t, b):
                    raise IrreducibleError(f"retreating edge {b} -> {t} is not a back edge")
                body = bodies.setdefault(t, {t})
                work = [b]
                while work:
                    n = work.pop()
                    if n not in body:
                        body.add(n)
                        work.extend(p for p in preds[n] if p in index)
    loops = [Loop(h, body) for h, body in bodies.items()]
    loops.sort(key=lambda lp: (-len(lp.body), index[lp.header]))
    for i, lp in enumerate(loops):
        for outer in reversed(loops[:i]):
            if lp.header in outer.body and lp.body <= outer.body:
                lp.parent = outer
                outer.children.append(lp)
                break
    loops.sort(key=lambda lp: (lp.depth, index[lp.header]))
    return loops


def innermost_loop(loops: list[Loop], block: str) -> Loop | None:
    best = None
    for lp in loops:
        if block in lp.body and (best is None or lp.depth > best.depth):
            best = lp
    return best
