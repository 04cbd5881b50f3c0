"""Kernel IR: a flat SSA instruction set with explicit basic blocks.

The textual form is line oriented::

    func saxpy(n, k) {
      space a elem=4 extent=64 readonly stream
      space b elem=4 extent=64
    block entry:
      jmp head
    block head:
      %i = phi [entry: 0, body: %i1]
      %c = icmp lt %i, %n
      br %c, body, exit
    block body:
      %v = load a[%i]
      %m = fmul %v, %k
      store b[%i], %m
      %i1 = iadd %i, 1
      jmp head
    block exit:
      ret 0
    }

Stage programs produced by the partitioner additionally declare ``channel``
lines and use ``push``/``pop``/``mov``.
"""

from __future__ import annotations

import hashlib
import json
import math
import operator
import re
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Union

from . import cfg

# ---------------------------------------------------------------------------
# Opcodes and latencies

INT_BINARY = ("iadd", "isub", "imul", "iand", "ior", "ixor", "shl", "shr")
FLOAT_BINARY = ("fadd", "fmul", "fdiv")
CMP_KINDS = ("eq", "ne", "lt", "le", "gt", "ge")
TERMINATORS = ("br", "jmp", "ret")
CONTROL = TERMINATORS
MEMORY = ("load", "store")
OPCODES = INT_BINARY + FLOAT_BINARY + (
    "icmp", "select", "phi", "mov", "const", "load", "store", "push", "pop",
) + TERMINATORS

ANNOTATIONS = ("readonly", "no_loop_carried", "stream", "random")


class LatencyTable(dict):
    """opcode -> (cycles, pipelined)."""

    @classmethod
    def default(cls) -> "LatencyTable":
        table = cls({op: (1, True) for op in INT_BINARY})
        table.update({
            "icmp": (1, True), "select": (1, True), "phi": (1, True),
            "mov": (1, True), "const": (1, True),
            "load": (1, True), "store": (1, True),
            "push": (1, True), "pop": (1, True),
            "fadd": (4, True), "fmul": (4, True), "fdiv": (16, False),
        })
        return table

    def with_overrides(self, overrides: dict[str, object]) -> "LatencyTable":
        table = LatencyTable(self)
        for op, value in overrides.items():
            if op not in OPCODES or op in CONTROL:
                raise KeyError(f"unknown opcode in latency table: {op}")
            if isinstance(value, tuple):
                cycles, pipelined = value
            else:
                cycles, pipelined = int(value), table.get(op, (1, True))[1]
            if int(cycles) < 1:
                raise ValueError(f"latency for {op} must be >= 1")
            table[op] = (int(cycles), bool(pipelined))
        return table


def opcode_latency(op: str, table: LatencyTable) -> tuple[int, bool]:
    if op in CONTROL:
        raise ValueError(f"{op} is a control opcode and has no latency entry")
    try:
        return table[op]
    except KeyError:
        raise KeyError(f"latency table has no entry for {op}") from None


def is_long(op: str, table: LatencyTable) -> bool:
    return op not in CONTROL and table[op][0] > 1


# ---------------------------------------------------------------------------
# Program structure


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return "%" + self.name


Operand = Union[Var, int, float]


def fmt_operand(op: Operand) -> str:
    if isinstance(op, Var):
        return str(op)
    if isinstance(op, float):
        return repr(op)
    return str(op)


@dataclass(frozen=True)
class MemSpace:
    name: str
    elem: int = 4
    extent: int = 1
    annotations: frozenset = frozenset()

    @property
    def readonly(self) -> bool:
        return "readonly" in self.annotations

    def __str__(self) -> str:
        flags = "".join(" " + a for a in ANNOTATIONS if a in self.annotations)
        return f"space {self.name} elem={self.elem} extent={self.extent}{flags}"


@dataclass(frozen=True)
class Instruction:
    opcode: str
    result: str | None = None
    operands: tuple = ()
    space: str | None = None
    channel: str | None = None
    incoming: tuple = ()  # ((label, operand), ...) for phi
    cmp: str | None = None
    targets: tuple = ()
    line: int = 0

    @property
    def is_terminator(self) -> bool:
        return self.opcode in TERMINATORS

    def uses(self) -> list[str]:
        names = [o.name for o in self.operands if isinstance(o, Var)]
        names += [o.name for _, o in self.incoming if isinstance(o, Var)]
        return names

    def __str__(self) -> str:
        op = self.opcode
        ops = [fmt_operand(o) for o in self.operands]
        if op == "phi":
            body = "phi [" + ", ".join(f"{lbl}: {fmt_operand(v)}" for lbl, v in self.incoming) + "]"
        elif op == "load":
            body = f"load {self.space}[{ops[0]}]"
        elif op == "store":
            return f"store {self.space}[{ops[0]}], {ops[1]}"
        elif op == "pop":
            body = f"pop {self.channel}"
        elif op == "push":
            return f"push {self.channel}, {ops[0]}"
        elif op == "br":
            return f"br {ops[0]}, {self.targets[0]}, {self.targets[1]}"
        elif op == "jmp":
            return f"jmp {self.targets[0]}"
        elif op == "ret":
            return "ret" + (f" {ops[0]}" if ops else "")
        elif op == "icmp":
            body = f"icmp {self.cmp} " + ", ".join(ops)
        else:
            body = op + (" " + ", ".join(ops) if ops else "")
        return f"%{self.result} = {body}"


@dataclass(frozen=True)
class Block:
    label: str
    instructions: tuple

    @property
    def terminator(self) -> Instruction:
        return self.instructions[-1]

    def successors(self) -> list[str]:
        if not self.instructions:
            return []
        term = self.instructions[-1]
        out: list[str] = []
        for t in term.targets:
            if t not in out:
                out.append(t)
        return out


@dataclass(frozen=True)
class Channel:
    name: str
    depth: int = 16


@dataclass(frozen=True)
class Program:
    name: str
    args: tuple = ()
    spaces: tuple = ()
    blocks: tuple = ()
    channels: tuple = ()

    @property
    def entry(self) -> str:
        return self.blocks[0].label

    @cached_property
    def space_map(self) -> dict[str, MemSpace]:
        return {s.name: s for s in self.spaces}

    @cached_property
    def block_map(self) -> dict[str, Block]:
        return {b.label: b for b in self.blocks}

    @cached_property
    def succ(self) -> dict[str, list[str]]:
        return {b.label: b.successors() for b in self.blocks}

    @cached_property
    def positions(self) -> list[tuple[int, str, Instruction]]:
        """(position, block label, instruction) for every instruction in text order."""
        out = []
        pos = 0
        for b in self.blocks:
            for ins in b.instructions:
                out.append((pos, b.label, ins))
                pos += 1
        return out

    @cached_property
    def definitions(self) -> dict[str, int]:
        """value name -> position of its (first) defining instruction."""
        defs: dict[str, int] = {}
        for pos, _, ins in self.positions:
            if ins.result is not None:
                defs.setdefault(ins.result, pos)
        return defs

    def __str__(self) -> str:
        return print_ir(self)


# ---------------------------------------------------------------------------
# Printing and parsing


def print_ir(p: Program) -> str:
    lines = [f"func {p.name}(" + ", ".join(p.args) + ") {"]
    lines += ["  " + str(s) for s in p.spaces]
    lines += [f"  channel {c.name} depth={c.depth}" for c in p.channels]
    for b in p.blocks:
        lines.append(f"block {b.label}:")
        lines += ["  " + str(ins) for ins in b.instructions]
    lines.append("}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Diagnostic:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


class IRError(Exception):
    pass


class ParseError(IRError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


class Trap(IRError):
    """Runtime fault: out-of-bounds access or division by zero."""


class FuelExhausted(IRError):
    pass


_NAME = r"[A-Za-z_][\w.]*"
_RE_FUNC = re.compile(rf"^func\s+({_NAME})\s*\(([^)]*)\)\s*\{{$")
_RE_SPACE = re.compile(rf"^space\s+({_NAME})\s+(.*)$")
_RE_CHANNEL = re.compile(rf"^channel\s+({_NAME})(?:\s+depth=(\d+))?$")
_RE_BLOCK = re.compile(rf"^block\s+({_NAME})\s*:$")
_RE_ASSIGN = re.compile(rf"^%({_NAME})\s*=\s*(\w+)\s*(.*)$")
_RE_MEMREF = re.compile(rf"^({_NAME})\s*\[\s*(\S+?)\s*\](.*)$")


def _operand(tok: str) -> Operand:
    tok = tok.strip()
    if tok.startswith("%"):
        name = tok[1:]
        if not re.fullmatch(_NAME, name):
            raise ValueError(f"bad value name {tok!r}")
        return Var(name)
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        value = float(tok)
    except ValueError:
        raise ValueError(f"bad operand {tok!r}") from None
    if not math.isfinite(value):
        raise ValueError(f"non-finite literal {tok!r}")
    return value


def _operand_list(text: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    return tuple(_operand(t) for t in text.split(","))


def _parse_instruction(text: str, line: int) -> Instruction:
    m = _RE_ASSIGN.match(text)
    if m:
        result, op, rest = m.group(1), m.group(2), m.group(3).strip()
        if op not in OPCODES:
            raise ValueError(f"unknown opcode {op!r}")
        if op == "phi":
            if not (rest.startswith("[") and rest.endswith("]")):
                raise ValueError("phi expects [LABEL: value, ...]")
            inc = []
            for item in rest[1:-1].split(","):
                if not item.strip():
                    continue
                lbl, _, val = item.partition(":")
                if not _:
                    raise ValueError("phi incoming must be LABEL: value")
                inc.append((lbl.strip(), _operand(val)))
            return Instruction("phi", result, incoming=tuple(inc), line=line)
        if op == "load":
            mm = _RE_MEMREF.match(rest)
            if not mm or mm.group(3).strip():
                raise ValueError("load expects SPACE[%addr]")
            return Instruction("load", result, (_operand(mm.group(2)),), space=mm.group(1), line=line)
        if op == "pop":
            if not re.fullmatch(_NAME, rest):
                raise ValueError("pop expects a channel name")
            return Instruction("pop", result, channel=rest, line=line)
        if op == "icmp":
            kind, _, rest = rest.partition(" ")
            if kind not in CMP_KINDS:
                raise ValueError(f"unknown icmp kind {kind!r}")
            return Instruction("icmp", result, _operand_list(rest), cmp=kind, line=line)
        if op in ("store", "push", "br", "jmp", "ret"):
            raise ValueError(f"{op} does not produce a value")
        return Instruction(op, result, _operand_list(rest), line=line)

    op, _, rest = text.partition(" ")
    rest = rest.strip()
    if op == "store":
        mm = _RE_MEMREF.match(rest)
        if not mm or not mm.group(3).strip().startswith(","):
            raise ValueError("store expects SPACE[%addr], %value")
        return Instruction("store", None, (_operand(mm.group(2)), _operand(mm.group(3).strip()[1:])),
                           space=mm.group(1), line=line)
    if op == "push":
        ch, _, val = rest.partition(",")
        return Instruction("push", None, (_operand(val),), channel=ch.strip(), line=line)
    if op == "br":
        parts = [t.strip() for t in rest.split(",")]
        if len(parts) != 3:
            raise ValueError("br expects %cond, LABEL_T, LABEL_F")
        return Instruction("br", None, (_operand(parts[0]),), targets=(parts[1], parts[2]), line=line)
    if op == "jmp":
        if not re.fullmatch(_NAME, rest):
            raise ValueError("jmp expects a label")
        return Instruction("jmp", None, targets=(rest,), line=line)
    if op == "ret":
        return Instruction("ret", None, _operand_list(rest), line=line)
    if op in OPCODES:
        raise ValueError(f"{op} must assign a result")
    raise ValueError(f"unknown opcode {op!r}")


def parse_ir(text: str, allow_channels: bool = False) -> Program:
    """Parse and validate.  Raises :class:`ParseError` carrying line-numbered diagnostics."""
    diags: list[Diagnostic] = []
    name = None
    args: tuple = ()
    spaces: list[MemSpace] = []
    channels: list[Channel] = []
    blocks: list[tuple[str, list[Instruction], int]] = []
    closed = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        if closed:
            diags.append(Diagnostic(lineno, "text after closing brace"))
            continue
        if name is None:
            m = _RE_FUNC.match(line)
            if not m:
                diags.append(Diagnostic(lineno, "expected 'func NAME(args) {'"))
                break
            name = m.group(1)
            args = tuple(a.strip().lstrip("%") for a in m.group(2).split(",") if a.strip())
            continue
        if line == "}":
            closed = True
            continue
        m = _RE_BLOCK.match(line)
        if m:
            blocks.append((m.group(1), [], lineno))
            continue
        if not blocks:
            m = _RE_SPACE.match(line)
            if m:
                try:
                    spaces.append(_parse_space(m.group(1), m.group(2)))
                except ValueError as exc:
                    diags.append(Diagnostic(lineno, str(exc)))
                continue
            m = _RE_CHANNEL.match(line)
            if m:
                if not allow_channels:
                    diags.append(Diagnostic(lineno, "channels are not allowed in user input"))
                channels.append(Channel(m.group(1), int(m.group(2) or 16)))
                continue
            diags.append(Diagnostic(lineno, f"expected space, channel or block declaration: {line!r}"))
            continue
        try:
            blocks[-1][1].append(_parse_instruction(line, lineno))
        except ValueError as exc:
            diags.append(Diagnostic(lineno, str(exc)))
    if name is None and not diags:
        diags.append(Diagnostic(1, "empty input"))
    elif name is not None and not closed:
        diags.append(Diagnostic(len(text.splitlines()), "missing closing brace"))
    if diags:
        raise ParseError(diags)
    for label, instrs, lineno in blocks:
        if not instrs:
            diags.append(Diagnostic(lineno, f"block {label} is empty"))
    if diags:
        raise ParseError(diags)
    prog = Program(name, args, tuple(spaces),
                   tuple(Block(lbl, tuple(ins)) for lbl, ins, _ in blocks), tuple(channels))
    violations = validate(prog)
    if not allow_channels:
        for _, _, ins in prog.positions:
            if ins.opcode in ("push", "pop", "mov"):
                violations.append(Violation(ins.line, ins.opcode,
                                            f"{ins.opcode} is only valid in emitted stage programs"))
    if violations:
        raise ParseError([Diagnostic(v.line, f"{v.rule}: {v.detail}") for v in violations])
    return prog


def _parse_space(name: str, rest: str) -> MemSpace:
    elem, extent, ann = 4, None, set()
    for tok in rest.split():
        if tok.startswith("elem="):
            elem = int(tok[5:])
        elif tok.startswith("extent="):
            extent = int(tok[7:])
        elif tok in ANNOTATIONS:
            ann.add(tok)
        else:
            raise ValueError(f"unknown space attribute {tok!r}")
    if extent is None or extent <= 0:
        raise ValueError(f"space {name} needs extent > 0")
    if elem <= 0:
        raise ValueError(f"space {name} needs elem > 0")
    if {"stream", "random"} <= ann:
        raise ValueError(f"space {name} cannot be both stream and random")
    return MemSpace(name, elem, extent, frozenset(ann))


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Violation:
    line: int
    rule: str
    detail: str

    def __str__(self) -> str:
        return f"{self.rule}: {self.detail} (line {self.line})"


_ARITY = {op: 2 for op in INT_BINARY + FLOAT_BINARY}
_ARITY.update({"icmp": 2, "select": 3, "mov": 1, "const": 1, "load": 1, "store": 2,
               "push": 1, "pop": 0, "br": 1, "jmp": 0})


def validate(p: Program) -> list[Violation]:
    out: list[Violation] = []

    def bad(ins: Instruction | None, rule: str, detail: str) -> None:
        out.append(Violation(ins.line if ins is not None else 0, rule, detail))

    if not p.blocks:
        bad(None, "structure", "program has no blocks")
        return out
    names = [s.name for s in p.spaces]
    for s in p.spaces:
        if names.count(s.name) > 1:
            bad(None, "duplicate space", s.name)
        if s.extent <= 0:
            bad(None, "space extent", s.name)
    labels = [b.label for b in p.blocks]
    for lbl in set(labels):
        if labels.count(lbl) > 1:
            bad(None, "duplicate label", lbl)
    chans = {c.name for c in p.channels}

    for b in p.blocks:
        seen_body = False
        for i, ins in enumerate(b.instructions):
            last = i == len(b.instructions) - 1
            if ins.is_terminator != last:
                bad(ins, "terminator", f"block {b.label} must end with exactly one terminator")
            if ins.opcode == "phi":
                if seen_body:
                    bad(ins, "phi placement", f"phi %{ins.result} after non-phi instruction")
            else:
                seen_body = True
            arity = _ARITY.get(ins.opcode)
            if arity is not None and len(ins.operands) != arity:
                bad(ins, "arity", f"{ins.opcode} takes {arity} operands")
            if ins.opcode == "ret" and len(ins.operands) > 1:
                bad(ins, "arity", "ret takes at most one operand")
            if ins.opcode == "const" and ins.operands and isinstance(ins.operands[0], Var):
                bad(ins, "arity", "const takes a literal")
            for t in ins.targets:
                if t not in p.block_map:
                    bad(ins, "undeclared label", t)
            if ins.opcode in MEMORY:
                space = p.space_map.get(ins.space)
                if space is None:
                    bad(ins, "undeclared space", str(ins.space))
                elif ins.opcode == "store" and space.readonly:
                    bad(ins, "store to readonly space", ins.space)
            if ins.opcode in ("push", "pop") and ins.channel not in chans:
                bad(ins, "undeclared channel", str(ins.channel))
            if ins.result is None and ins.opcode not in ("store", "push") + TERMINATORS:
                bad(ins, "arity", f"{ins.opcode} must assign a result")
    if out:
        return out

    succ = p.succ
    preds = cfg.predecessors(succ)
    if preds[p.entry]:
        bad(p.blocks[0].instructions[0], "entry", "entry block must have no predecessors")
    idom = cfg.immediate_dominators(succ, p.entry)
    for b in p.blocks:
        if b.label not in idom:
            bad(b.instructions[0], "unreachable block", b.label)
    try:
        cfg.find_loops(succ, p.entry)
    except cfg.IrreducibleError as exc:
        bad(None, "irreducible control flow", str(exc))

    # definitions
    defs: dict[str, list[tuple[str, int, Instruction]]] = {}
    for a in p.args:
        defs.setdefault(a, []).append(("<args>", -1, None))
    for b in p.blocks:
        for i, ins in enumerate(b.instructions):
            if ins.result is not None:
                defs.setdefault(ins.result, []).append((b.label, i, ins))
    for name, ds in defs.items():
        if len(ds) > 1 and not all(d[2] is not None and d[2].opcode == "mov" for d in ds):
            bad(ds[-1][2], "SSA single definition", f"%{name} defined {len(ds)} times")

    def available(name: str, block: str, index: int) -> bool:
        ds = defs.get(name)
        if not ds:
            return False
        if len(ds) > 1 or ds[0][0] == "<args>":
            return True
        dblock, dindex, _ = ds[0]
        if dblock == block:
            return dindex < index
        return cfg.dominates(idom, dblock, block)

    for b in p.blocks:
        if b.label not in idom:
            continue
        for i, ins in enumerate(b.instructions):
            if ins.opcode == "phi":
                inc_labels = [lbl for lbl, _ in ins.incoming]
                for lbl, val in ins.incoming:
                    if lbl not in preds[b.label]:
                        bad(ins, "phi incoming block not a predecessor", f"%{ins.result} lists {lbl}")
                    elif isinstance(val, Var):
                        if val.name not in defs:
                            bad(ins, "undefined value", f"%{val.name}")
                        elif lbl in idom and not available(val.name, lbl, len(p.block_map[lbl].instructions)):
                            bad(ins, "SSA dominance", f"%{val.name} does not reach end of {lbl}")
                for pr in preds[b.label]:
                    if pr in idom and inc_labels.count(pr) != 1:
                        bad(ins, "phi incoming mismatch", f"%{ins.result} needs one entry for {pr}")
                continue
            for name in ins.uses():
                if name not in defs:
                    bad(ins, "undefined value", f"%{name}")
                elif not available(name, b.label, i):
                    bad(ins, "SSA dominance", f"%{name} used before definition in {b.label}")
    return out


# ---------------------------------------------------------------------------
# Memory images


def _wrap32(x: int) -> int:
    x &= 0xFFFFFFFF
    return x - 0x100000000 if x & 0x80000000 else x


class MemoryImage:
    """Per-space flat arrays.  Mutable; everything else in the IR is frozen."""

    def __init__(self, arrays: dict[str, list] | None = None):
        self.arrays: dict[str, list] = {k: list(v) for k, v in (arrays or {}).items()}

    @classmethod
    def zeros(cls, p: Program) -> "MemoryImage":
        return cls({s.name: [0] * s.extent for s in p.spaces})

    def copy(self) -> "MemoryImage":
        return MemoryImage(self.arrays)

    def __getitem__(self, space: str) -> list:
        return self.arrays[space]

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.arrays):
            h.update(name.encode())
            h.update(json.dumps(self.arrays[name], separators=(",", ":")).encode())
        return h.hexdigest()[:16]

    def __eq__(self, other) -> bool:
        return isinstance(other, MemoryImage) and self.arrays == other.arrays


def values_close(a, b, rel: float = 1e-6) -> bool:
    if isinstance(a, float) or isinstance(b, float):
        return math.isclose(a, b, rel_tol=rel, abs_tol=rel)
    return a == b


def images_close(a: MemoryImage, b: MemoryImage, rel: float = 1e-6) -> bool:
    if a.arrays.keys() != b.arrays.keys():
        return False
    for k, xs in a.arrays.items():
        ys = b.arrays[k]
        if len(xs) != len(ys) or not all(values_close(x, y, rel) for x, y in zip(xs, ys)):
            return False
    return True


# ---------------------------------------------------------------------------
# Interpretation


def _fdiv(a, b):
    if b == 0:
        raise Trap("division by zero")
    return a / b


def _shl(a, b):
    return _wrap32(a << (b & 31))


def _shr(a, b):
    return a >> (b & 31)


PURE_OPS = {
    "iadd": lambda a, b: ((a + b + 0x80000000) & 0xFFFFFFFF) - 0x80000000,
    "isub": lambda a, b: ((a - b + 0x80000000) & 0xFFFFFFFF) - 0x80000000,
    "imul": lambda a, b: ((a * b + 0x80000000) & 0xFFFFFFFF) - 0x80000000,
    "iand": lambda a, b: a & b,
    "ior": lambda a, b: a | b,
    "ixor": lambda a, b: a ^ b,
    "shl": _shl,
    "shr": _shr,
    "fadd": operator.add,
    "fmul": operator.mul,
    "fdiv": _fdiv,
}
CMP_OPS = {"eq": operator.eq, "ne": operator.ne, "lt": operator.lt,
           "le": operator.le, "gt": operator.gt, "ge": operator.ge}

# compiled op kinds
K_PURE, K_CMP, K_SELECT, K_MOV, K_LOAD, K_STORE, K_PUSH, K_POP, K_BR, K_JMP, K_RET = range(11)


def _lower(o: Operand):
    return o.name if isinstance(o, Var) else o


@dataclass
class CompiledBlock:
    label: str
    phis: list  # [(dest, {pred: operand})]
    ops: list  # [(kind, dest, fn_or_extra, operands, ins)]


def compile_program(p: Program) -> tuple[list[CompiledBlock], dict[str, int]]:
    """Lower to tuples; operands become value names (str) or literal numbers."""
    index = {b.label: i for i, b in enumerate(p.blocks)}
    blocks = []
    for b in p.blocks:
        phis, ops = [], []
        for ins in b.instructions:
            op = ins.opcode
            args = tuple(_lower(o) for o in ins.operands)
            if op == "phi":
                phis.append((ins.result, {lbl: _lower(v) for lbl, v in ins.incoming}))
            elif op in PURE_OPS:
                ops.append((K_PURE, ins.result, PURE_OPS[op], args, ins))
            elif op == "icmp":
                ops.append((K_CMP, ins.result, CMP_OPS[ins.cmp], args, ins))
            elif op == "select":
                ops.append((K_SELECT, ins.result, None, args, ins))
            elif op in ("mov", "const"):
                ops.append((K_MOV, ins.result, None, args, ins))
            elif op == "load":
                ops.append((K_LOAD, ins.result, ins.space, args, ins))
            elif op == "store":
                ops.append((K_STORE, None, ins.space, args, ins))
            elif op == "push":
                ops.append((K_PUSH, None, ins.channel, args, ins))
            elif op == "pop":
                ops.append((K_POP, ins.result, ins.channel, args, ins))
            elif op == "br":
                ops.append((K_BR, None, (index[ins.targets[0]], index[ins.targets[1]]), args, ins))
            elif op == "jmp":
                ops.append((K_JMP, None, index[ins.targets[0]], args, ins))
            elif op == "ret":
                ops.append((K_RET, None, None, args, ins))
        blocks.append(CompiledBlock(b.label, phis, ops))
    return blocks, index


class ChannelQueue:
    """Bounded (or unbounded when ``capacity`` is None) FIFO used by the queue interpreter."""

    def __init__(self, name: str, capacity: int | None = None):
        self.name = name
        self.capacity = capacity
        self.items: deque = deque()
        self.pushes = 0
        self.pops = 0
        self.closed = False

    def full(self) -> bool:
        return self.capacity is not None and len(self.items) >= self.capacity


BLOCKED_POP = "pop"
BLOCKED_PUSH = "push"
DONE = "done"
RUNNING = "running"


class Machine:
    """Resumable sequential interpreter for one program.

    ``channels`` maps channel names to :class:`ChannelQueue`; needed only for
    stage programs.
    """

    def __init__(self, p: Program, memory: MemoryImage, args: Iterable = (),
                 channels: dict[str, ChannelQueue] | None = None, trace: bool = True):
        self.program = p
        self.blocks, self.index = compile_program(p)
        self.memory = memory
        args = list(args)
        if len(args) != len(p.args):
            raise IRError(f"{p.name} expects {len(p.args)} arguments, got {len(args)}")
        self.env: dict[str, object] = dict(zip(p.args, args))
        self.channels = channels or {}
        self.trace: list[tuple[str, int, str]] | None = [] if trace else None
        self.block = 0
        self.pc = 0
        self.prev: str | None = None
        self.steps = 0
        self.state = RUNNING
        self.result = None
        self._enter(0, None)

    def _enter(self, target: int, prev: str | None) -> None:
        blk = self.blocks[target]
        if blk.phis:
            env = self.env
            vals = []
            for _, inc in blk.phis:
                o = inc[prev]
                vals.append(env[o] if o.__class__ is str else o)
            for (dest, _), v in zip(blk.phis, vals):
                env[dest] = v
            self.steps += len(blk.phis)
        self.block = target
        self.pc = 0

    def _addr(self, space: str, addr) -> list:
        arr = self.memory.arrays[space]
        if addr.__class__ is not int or not 0 <= addr < len(arr):
            raise Trap(f"out-of-bounds access {space}[{addr}] in {self.program.name}")
        return arr

    def run(self, fuel: int | None = None) -> str:
        """Execute until done, blocked on a channel, or ``fuel`` more instructions ran."""
        env = self.env
        blocks = self.blocks
        trace = self.trace
        limit = None if fuel is None else self.steps + fuel
        ops = blocks[self.block].ops
        while True:
            if limit is not None and self.steps >= limit:
                return RUNNING
            kind, dest, extra, args, ins = ops[self.pc]
            self.steps += 1
            if kind == K_PURE:
                a, b = args
                env[dest] = extra(env[a] if a.__class__ is str else a, env[b] if b.__class__ is str else b)
            elif kind == K_CMP:
                a, b = args
                env[dest] = 1 if extra(env[a] if a.__class__ is str else a, env[b] if b.__class__ is str else b) else 0
            elif kind == K_LOAD:
                a = args[0]
                addr = env[a] if a.__class__ is str else a
                env[dest] = self._addr(extra, addr)[addr]
                if trace is not None:
                    trace.append((extra, addr, "R"))
            elif kind == K_STORE:
                a, v = args
                addr = env[a] if a.__class__ is str else a
                self._addr(extra, addr)[addr] = env[v] if v.__class__ is str else v
                if trace is not None:
                    trace.append((extra, addr, "W"))
            elif kind == K_SELECT:
                c, a, b = args
                c = env[c] if c.__class__ is str else c
                pick = a if c else b
                env[dest] = env[pick] if pick.__class__ is str else pick
            elif kind == K_MOV:
                a = args[0]
                env[dest] = env[a] if a.__class__ is str else a
            elif kind == K_BR:
                c = args[0]
                c = env[c] if c.__class__ is str else c
                prev = blocks[self.block].label
                self._enter(extra[0] if c else extra[1], prev)
                ops = blocks[self.block].ops
                continue
            elif kind == K_JMP:
                prev = blocks[self.block].label
                self._enter(extra, prev)
                ops = blocks[self.block].ops
                continue
            elif kind == K_POP:
                q = self.channels[extra]
                if not q.items:
                    self.steps -= 1
                    if q.closed:
                        raise IRError(f"pop from drained, closed channel {extra}")
                    return BLOCKED_POP
                env[dest] = q.items.popleft()
                q.pops += 1
            elif kind == K_PUSH:
                q = self.channels[extra]
                if q.full():
                    self.steps -= 1
                    return BLOCKED_PUSH
                a = args[0]
                q.items.append(env[a] if a.__class__ is str else a)
                q.pushes += 1
            elif kind == K_RET:
                if args:
                    a = args[0]
                    self.result = env[a] if a.__class__ is str else a
                self.state = DONE
                return DONE
            self.pc += 1


@dataclass
class InterpResult:
    memory: MemoryImage
    value: object
    trace: list = field(default_factory=list)
    steps: int = 0


def interpret(p: Program, mem: MemoryImage, args: Iterable = (), fuel: int = 100_000_000,
              trace: bool = True) -> InterpResult:
    """Run ``p`` sequentially on a copy of ``mem``.

    Raises :class:`Trap` on out-of-bounds or division by zero and
    :class:`FuelExhausted` when more than ``fuel`` instructions execute.
    """
    m = Machine(p, mem.copy(), args, trace=trace)
    state = m.run(fuel)
    if state == RUNNING:
        raise FuelExhausted(f"{p.name}: fuel of {fuel} instructions exhausted")
    if state != DONE:
        raise IRError(f"{p.name} blocked on a channel outside the queue interpreter")
    return InterpResult(m.memory, m.result, m.trace or [], m.steps)


def renamed(p: Program, **changes) -> Program:
    return replace(p, **changes)
