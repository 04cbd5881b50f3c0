"""Compile a stage program into a Python generator for the timing engine.

The generator keeps SSA values in local variables and only yields at points
where the stage can block: an initiation-interval wait at a loop header, a
use of a load that has not returned, a rejected memory issue, and FIFO
full/empty conditions.  Each yield produces ``(state, wake, moved)`` and
receives the current cycle back.
"""

from __future__ import annotations

from .cfg import find_loops
from .ir import CMP_OPS, IRError, Program, Trap, Var, _fdiv, _shl, _shr

_WRAP = "((({a}) {op} ({b}) + 0x80000000) & 0xFFFFFFFF) - 0x80000000"
_BINARY = {
    "iadd": _WRAP.replace("{op}", "+"),
    "isub": _WRAP.replace("{op}", "-"),
    "imul": _WRAP.replace("{op}", "*"),
    "iand": "{a} & {b}",
    "ior": "{a} | {b}",
    "ixor": "{a} ^ {b}",
    "shl": "_shl({a}, {b})",
    "shr": "_shr({a}, {b})",
    "fadd": "{a} + {b}",
    "fmul": "{a} * {b}",
    "fdiv": "_fdiv({a}, {b})",
}
_CMP = {"eq": "==", "ne": "!=", "lt": "<", "le": "<=", "gt": ">", "ge": ">="}
assert set(_CMP) == set(CMP_OPS)


class _Names:
    def __init__(self):
        self.map: dict[str, str] = {}

    def __call__(self, name: str) -> str:
        if name not in self.map:
            self.map[name] = f"v{len(self.map)}"
        return self.map[name]


def generate_source(p: Program, ii: int) -> str:
    names = _Names()
    loaded = {ins.result for b in p.blocks for ins in b.instructions if ins.opcode == "load"}
    pend = {v: f"p{i}" for i, v in enumerate(sorted(loaded))}
    headers = {lp.header for lp in find_loops(p.succ, p.entry)}
    index = {b.label: i for i, b in enumerate(p.blocks)}
    spaces = sorted({ins.space for b in p.blocks for ins in b.instructions if ins.space})
    sp = {s: f"a{i}" for i, s in enumerate(spaces)}
    channels = sorted({ins.channel for b in p.blocks for ins in b.instructions if ins.channel})
    ch = {c: f"f{i}" for i, c in enumerate(channels)}

    def val(o) -> str:
        return names(o.name) if isinstance(o, Var) else repr(o)

    out = ["def _stage(S, A, F, args):"]
    w = out.append
    if p.args:
        w(f"    {', '.join(names(a) for a in p.args)}, = args")
    for s, local in sp.items():
        w(f"    {local} = A[{s!r}]; n{local} = len({local})")
    for c, local in ch.items():
        w(f"    {local} = F[{c!r}]")
    for local in pend.values():
        w(f"    {local} = None")
    w("    req = S.request; rdy = S.ready; popw = S.pop_wait; next_event = S.mem.next_event")
    w("    issue_at = 0; iters = 0; count = 0; moved = True")
    w(f"    now = yield None")
    w(f"    blk = 0")
    w("    while True:")

    def wait(cond_setup: list[str], blocked: str, state: str, wake: str, ind: str) -> None:
        for line in cond_setup:
            w(ind + line)
        w(f"{ind}while {blocked}:")
        w(f"{ind}    now = yield ({state!r}, {wake}, moved)")
        w(f"{ind}    moved = False")
        for line in cond_setup:
            w(ind + "    " + line)
        w(f"{ind}moved = True")

    def use_checks(ins, ind: str) -> None:
        for v in ins.uses():
            if v in pend:
                pv = pend[v]
                w(f"{ind}if {pv} is not None:")
                wait([f"r = rdy({pv}, now)"], "r is not True", "mem", "r", ind + "    ")
                w(f"{ind}    {pv} = None")

    def define(dest: str, expr: str, ind: str) -> None:
        w(f"{ind}{names(dest)} = {expr}")
        if dest in pend:
            w(f"{ind}{pend[dest]} = None")

    first = True
    for b in p.blocks:
        i = index[b.label]
        w(f"        {'if' if first else 'elif'} blk == {i}:  # {b.label}")
        first = False
        ind = " " * 12
        if b.label in headers:
            w(f"{ind}if now < issue_at:")
            wait([], "now < issue_at", "busy", "issue_at", ind + "    ")
            w(f"{ind}issue_at = now + {ii}; iters += 1")
        n_ops = len(b.instructions)
        for ins in b.instructions:
            op = ins.opcode
            if op == "phi":
                raise IRError(f"{p.name}: stage programs must be phi-free")
            if op != "push":
                use_checks(ins, ind)
            args = [val(o) for o in ins.operands]
            if op in _BINARY:
                define(ins.result, _BINARY[op].format(a=args[0], b=args[1]), ind)
            elif op == "icmp":
                define(ins.result, f"1 if {args[0]} {_CMP[ins.cmp]} {args[1]} else 0", ind)
            elif op in ("mov", "const"):
                define(ins.result, args[0], ind)
            elif op == "select":
                define(ins.result, f"{args[1]} if {args[0]} else {args[2]}", ind)
            elif op in ("load", "store"):
                a = sp[ins.space]
                kind = "R" if op == "load" else "W"
                w(f"{ind}x = {args[0]}")
                w(f"{ind}if x.__class__ is not int or not 0 <= x < n{a}:")
                w(f"{ind}    S.trap({ins.space!r}, x)")
                wait([f"r = req({ins.space!r}, x, {kind!r}, now)"], "r is None", "mem", "next_event()", ind)
                if op == "load":
                    w(f"{ind}{names(ins.result)} = {a}[x]")
                    w(f"{ind}{pend[ins.result]} = r")
                else:
                    w(f"{ind}{a}[x] = {args[1]}")
            elif op == "push":
                q = ch[ins.channel]
                wait([], f"len({q}.items) >= {q}.capacity", "fifo_full", "None", ind)
                o = ins.operands[0]
                rid = pend.get(o.name, "None") if isinstance(o, Var) else "None"
                w(f"{ind}{q}.push(now, {args[0]}, {rid})")
            elif op == "pop":
                q = ch[ins.channel]
                wait([f"r = popw({q}, now)"], "r is not True", "fifo_empty", "r", ind)
                define(ins.result, f"{q}.pop(now)", ind)
            elif op == "br":
                t, f = (index[x] for x in ins.targets)
                w(f"{ind}count += {n_ops}")
                w(f"{ind}blk = {t} if {args[0]} else {f}")
            elif op == "jmp":
                w(f"{ind}count += {n_ops}")
                w(f"{ind}blk = {index[ins.targets[0]]}")
            elif op == "ret":
                w(f"{ind}S.finish({args[0] if args else 'None'}, iters, count + {n_ops})")
                w(f"{ind}return")
            else:
                raise IRError(f"{p.name}: cannot compile opcode {op}")
    return "\n".join(out) + "\n"


def compile_stage(p: Program, ii: int):
    """Return a generator factory ``f(S, arrays, fifos, args)`` for program ``p``."""
    src = generate_source(p, ii)
    ns = {"_fdiv": _fdiv, "_shl": _shl, "_shr": _shr, "Trap": Trap}
    exec(compile(src, f"<stage {p.name}>", "exec"), ns)
    return ns["_stage"]
