"""Benchmark kernels in IR form with seeded inputs and host-side oracles."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .ir import MemoryImage, Program, images_close, parse_ir, values_close

KINDS = ("spmv", "knapsack", "floyd_warshall", "dfs")

SCALES = {
    "tiny": {
        "spmv": {"n": 24, "density": 0.25},
        "knapsack": {"capacity": 64, "items": 6},
        "floyd_warshall": {"n": 12},
        "dfs": {"nodes": 60, "degree": 4},
    },
    "desk": {
        "spmv": {"n": 256, "density": 0.25},
        "knapsack": {"capacity": 256, "items": 32},
        "floyd_warshall": {"n": 64},
        "dfs": {"nodes": 500, "degree": 20},
    },
    "full": {
        "spmv": {"n": 4096, "density": 0.25},
        "knapsack": {"capacity": 3200, "items": 200},
        "floyd_warshall": {"n": 1024},
        "dfs": {"nodes": 4000, "degree": 200},
    },
}

INF = 1_000_000


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    params: tuple  # sorted (name, value) pairs
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        for k, v in self.params:
            if not v > 0:
                raise ValueError(f"{self.kind}: parameter {k} must be positive, got {v}")
        if self.kind == "spmv" and not self.get("density") <= 1:
            raise ValueError("spmv: density must be in (0, 1]")

    @classmethod
    def at_scale(cls, kind: str, scale: str = "desk", seed: int = 0, **overrides) -> "KernelSpec":
        if scale not in SCALES:
            raise ValueError(f"unknown scale {scale!r}")
        if kind not in KINDS:
            raise ValueError(f"unknown kernel kind {kind!r}")
        params = dict(SCALES[scale][kind])
        for k, v in overrides.items():
            if k not in params:
                raise ValueError(f"{kind} has no parameter {k!r}")
            params[k] = v
        return cls(kind, tuple(sorted(params.items())), seed)

    def get(self, name: str):
        return dict(self.params)[name]


@dataclass
class Kernel:
    spec: KernelSpec | None
    program: Program
    memory: MemoryImage
    args: tuple
    expected: dict = field(default_factory=dict)  # space -> expected contents
    expected_value: object = None

    def check(self, image: MemoryImage, value) -> bool:
        """Compare a run's outputs with the host oracle."""
        for space, want in self.expected.items():
            if not images_close(MemoryImage({space: image[space]}), MemoryImage({space: want})):
                return False
        return values_close(value, self.expected_value)


def generate(spec: KernelSpec) -> Kernel:
    rng = random.Random(f"{spec.kind}:{spec.seed}")
    return _GENERATORS[spec.kind](spec, rng)


# ---------------------------------------------------------------------------
# SpMV over CSR


SPMV_IR = """\
func spmv(n) {{
  space row_ptr elem=4 extent={rows1} readonly stream
  space col_idx elem=4 extent={nnz} readonly stream
  space vals elem=4 extent={nnz} readonly stream
  space x elem=4 extent={n} readonly random
  space y elem=4 extent={n}
block entry:
  jmp outer_head
block outer_head:
  %i = phi [entry: 0, outer_latch: %i_next]
  %ci = icmp lt %i, %n
  br %ci, outer_body, exit
block outer_body:
  %start = load row_ptr[%i]
  %i_next = iadd %i, 1
  %end = load row_ptr[%i_next]
  jmp inner_head
block inner_head:
  %j = phi [outer_body: %start, inner_body: %j1]
  %acc = phi [outer_body: 0.0, inner_body: %acc1]
  %cj = icmp lt %j, %end
  br %cj, inner_body, outer_latch
block inner_body:
  %col = load col_idx[%j]
  %v = load vals[%j]
  %xv = load x[%col]
  %p = fmul %v, %xv
  %acc1 = fadd %acc, %p
  %j1 = iadd %j, 1
  jmp inner_head
block outer_latch:
  store y[%i], %acc
  jmp outer_head
block exit:
  ret 0
}}
"""


def _spmv(spec: KernelSpec, rng: random.Random) -> Kernel:
    n, density = spec.get("n"), spec.get("density")
    row_ptr, cols, vals = [0], [], []
    for _ in range(n):
        for c in range(n):
            if rng.random() < density:
                cols.append(c)
                vals.append(rng.random())
        row_ptr.append(len(cols))
    x = [rng.random() for _ in range(n)]
    nnz = max(1, len(cols))
    prog = parse_ir(SPMV_IR.format(rows1=n + 1, nnz=nnz, n=n))
    mem = MemoryImage({"row_ptr": row_ptr, "col_idx": cols + [0] * (nnz - len(cols)),
                       "vals": vals + [0.0] * (nnz - len(vals)), "x": x, "y": [0.0] * n})
    y = []
    for i in range(n):
        acc = 0.0
        for j in range(row_ptr[i], row_ptr[i + 1]):
            acc = acc + vals[j] * x[cols[j]]
        y.append(acc)
    return Kernel(spec, prog, mem, (n,), {"y": y}, 0)


# ---------------------------------------------------------------------------
# 0/1 knapsack, bottom-up table


KNAPSACK_IR = """\
func knapsack(items, cap) {{
  space wt elem=4 extent={items} readonly stream
  space val elem=4 extent={items} readonly stream
  space dp elem=4 extent={cells} no_loop_carried random
block entry:
  %stride = iadd %cap, 1
  jmp item_head
block item_head:
  %it = phi [entry: 0, item_latch: %it1]
  %ci = icmp lt %it, %items
  br %ci, item_body, exit
block item_body:
  %w = load wt[%it]
  %v = load val[%it]
  %row = imul %it, %stride
  %it1 = iadd %it, 1
  %next = imul %it1, %stride
  jmp cap_head
block cap_head:
  %c = phi [item_body: 0, join: %c1]
  %cc = icmp le %c, %cap
  br %cc, cap_body, item_latch
block cap_body:
  %at = iadd %row, %c
  %skip = load dp[%at]
  %fits = icmp ge %c, %w
  br %fits, take, notake
block take:
  %back = isub %at, %w
  %prev = load dp[%back]
  %gain = iadd %prev, %v
  %better = icmp gt %gain, %skip
  %best_t = select %better, %gain, %skip
  jmp join
block notake:
  jmp join
block join:
  %best = phi [take: %best_t, notake: %skip]
  %dst = iadd %next, %c
  store dp[%dst], %best
  %c1 = iadd %c, 1
  jmp cap_head
block item_latch:
  jmp item_head
block exit:
  %last = imul %items, %stride
  %final = iadd %last, %cap
  %answer = load dp[%final]
  ret %answer
}}
"""


def _knapsack(spec: KernelSpec, rng: random.Random) -> Kernel:
    m, cap = spec.get("items"), spec.get("capacity")
    wt = [rng.randint(1, max(1, cap // 2)) for _ in range(m)]
    val = [rng.randint(1, 100) for _ in range(m)]
    stride = cap + 1
    prog = parse_ir(KNAPSACK_IR.format(items=m, cells=(m + 1) * stride))
    mem = MemoryImage({"wt": wt, "val": val, "dp": [0] * ((m + 1) * stride)})
    dp = [0] * ((m + 1) * stride)
    for it in range(m):
        for c in range(stride):
            best = dp[it * stride + c]
            if c >= wt[it]:
                best = max(best, dp[it * stride + c - wt[it]] + val[it])
            dp[(it + 1) * stride + c] = best
    return Kernel(spec, prog, mem, (m, cap), {"dp": dp}, dp[m * stride + cap])


# ---------------------------------------------------------------------------
# Floyd-Warshall all-pairs shortest paths


FW_IR = """\
func floyd_warshall(n) {{
  space d elem=4 extent={cells} no_loop_carried random
block entry:
  jmp k_head
block k_head:
  %k = phi [entry: 0, k_latch: %k1]
  %ck = icmp lt %k, %n
  br %ck, k_body, exit
block k_body:
  %krow = imul %k, %n
  %k1 = iadd %k, 1
  jmp i_head
block i_head:
  %i = phi [k_body: 0, i_latch: %i1]
  %ci = icmp lt %i, %n
  br %ci, i_body, k_latch
block i_body:
  %irow = imul %i, %n
  %ik = iadd %irow, %k
  %i1 = iadd %i, 1
  jmp j_head
block j_head:
  %j = phi [i_body: 0, j_body: %j1]
  %cj = icmp lt %j, %n
  br %cj, j_body, i_latch
block j_body:
  %ij = iadd %irow, %j
  %kj = iadd %krow, %j
  %dij = load d[%ij]
  %dik = load d[%ik]
  %dkj = load d[%kj]
  %via = iadd %dik, %dkj
  %shorter = icmp lt %via, %dij
  %nd = select %shorter, %via, %dij
  store d[%ij], %nd
  %j1 = iadd %j, 1
  jmp j_head
block i_latch:
  jmp i_head
block k_latch:
  jmp k_head
block exit:
  ret 0
}}
"""


def _floyd_warshall(spec: KernelSpec, rng: random.Random) -> Kernel:
    n = spec.get("n")
    d = []
    for i in range(n):
        for j in range(n):
            d.append(0 if i == j else rng.randint(1, 100) if rng.random() < 0.5 else INF)
    prog = parse_ir(FW_IR.format(cells=n * n))
    mem = MemoryImage({"d": list(d)})
    for k in range(n):
        for i in range(n):
            for j in range(n):
                via = d[i * n + k] + d[k * n + j]
                if via < d[i * n + j]:
                    d[i * n + j] = via
    return Kernel(spec, prog, mem, (n,), {"d": d}, 0)


# ---------------------------------------------------------------------------
# Depth-first search with an explicit stack


DFS_IR = """\
func dfs(degree) {{
  space adj elem=4 extent={edges} readonly random
  space stack elem=4 extent={nodes}
  space visited elem=4 extent={nodes}
block entry:
  store stack[0], 0
  store visited[0], 1
  jmp outer_head
block outer_head:
  %sp = phi [entry: 1, outer_latch: %sp2]
  %cnt = phi [entry: 1, outer_latch: %cnt2]
  %more = icmp gt %sp, 0
  br %more, outer_body, exit
block outer_body:
  %sp1 = isub %sp, 1
  %u = load stack[%sp1]
  %base = imul %u, %degree
  jmp inner_head
block inner_head:
  %e = phi [outer_body: 0, inner_latch: %e1]
  %sp2 = phi [outer_body: %sp1, inner_latch: %sp3]
  %cnt2 = phi [outer_body: %cnt, inner_latch: %cnt3]
  %ce = icmp lt %e, %degree
  br %ce, inner_body, outer_latch
block inner_body:
  %a = iadd %base, %e
  %v = load adj[%a]
  %seen = load visited[%v]
  %fresh = icmp eq %seen, 0
  br %fresh, visit, skip
block visit:
  store visited[%v], 1
  store stack[%sp2], %v
  %sp4 = iadd %sp2, 1
  %cnt4 = iadd %cnt2, 1
  jmp inner_latch
block skip:
  jmp inner_latch
block inner_latch:
  %sp3 = phi [visit: %sp4, skip: %sp2]
  %cnt3 = phi [visit: %cnt4, skip: %cnt2]
  %e1 = iadd %e, 1
  jmp inner_head
block outer_latch:
  jmp outer_head
block exit:
  ret %cnt
}}
"""


def _dfs(spec: KernelSpec, rng: random.Random) -> Kernel:
    n, deg = spec.get("nodes"), spec.get("degree")
    adj = [rng.randrange(n) for _ in range(n * deg)]
    prog = parse_ir(DFS_IR.format(edges=n * deg, nodes=n))
    mem = MemoryImage({"adj": adj, "stack": [0] * n, "visited": [0] * n})
    stack, visited = [0] * n, [0] * n
    stack[0], visited[0] = 0, 1
    sp, count = 1, 1
    while sp > 0:
        sp -= 1
        u = stack[sp]
        for e in range(deg):
            v = adj[u * deg + e]
            if not visited[v]:
                visited[v] = 1
                stack[sp] = v
                sp += 1
                count += 1
    return Kernel(spec, prog, mem, (deg,), {"stack": stack, "visited": visited}, count)


_GENERATORS = {"spmv": _spmv, "knapsack": _knapsack, "floyd_warshall": _floyd_warshall, "dfs": _dfs}


def kernel_catalog() -> list[tuple[str, str, str]]:
    return [
        ("spmv", "sparse matrix-vector multiply over CSR; x is gathered through col_idx",
         "row_ptr, col_idx and vals are readonly stream spaces; x is readonly random"),
        ("knapsack", "0/1 knapsack by bottom-up dynamic programming",
         "dp needs no_loop_carried: each row reads only the previous row, so the table's "
         "store/load pairs carry no dependence across inner iterations"),
        ("floyd_warshall", "all-pairs shortest paths, triple loop with select-min",
         "d is no_loop_carried: row k and column k are fixed points of step k"),
        ("dfs", "iterative depth-first search counting reachable nodes",
         "stack and visited are read-write without annotations; the stack load/store pair "
         "forms a dependence cycle through memory, so it stays in one stage"),
    ]


# ---------------------------------------------------------------------------
# Random structured programs for property tests


class _Builder:
    def __init__(self, rng: random.Random):
        self.rng = rng
        self.lines: list[str] = []
        self.n = 0

    def fresh(self, stem: str) -> str:
        self.n += 1
        return f"{stem}{self.n}"

    def block(self, label: str) -> None:
        self.lines.append(f"block {label}:")

    def op(self, text: str) -> None:
        self.lines.append("  " + text)


def _segment(b: _Builder, ints: list, floats: list, ops: int) -> None:
    """Straight-line random work; extends the pools in place."""
    rng = b.rng
    for _ in range(ops):
        r = rng.random()
        if r < 0.25:
            x = b.fresh("t")
            op = rng.choice(("iadd", "isub", "imul", "iand", "ior", "ixor"))
            rhs = rng.choice(ints) if rng.random() < 0.6 else str(rng.randint(0, 9))
            b.op(f"%{x} = {op} {rng.choice(ints)}, {rhs}")
            ints.append(f"%{x}")
        elif r < 0.55:
            a = b.fresh("a")
            b.op(f"%{a} = iand {rng.choice(ints)}, 63")
            x = b.fresh("l")
            space = rng.choice(("fin", "iin", "rw"))
            b.op(f"%{x} = load {space}[%{a}]")
            (ints if space == "iin" else floats).append(f"%{x}")
        elif r < 0.7 and floats:
            x = b.fresh("f")
            b.op(f"%{x} = {rng.choice(('fadd', 'fmul'))} {rng.choice(floats)}, {rng.choice(floats)}")
            floats.append(f"%{x}")
        elif r < 0.8:
            c, x = b.fresh("q"), b.fresh("s")
            b.op(f"%{c} = icmp {rng.choice(('lt', 'ge', 'eq', 'ne'))} {rng.choice(ints)}, {rng.randint(0, 40)}")
            b.op(f"%{x} = select %{c}, {rng.choice(ints)}, {rng.choice(ints)}")
            ints.append(f"%{x}")
        else:
            a = b.fresh("a")
            b.op(f"%{a} = iand {rng.choice(ints)}, 63")
            space = rng.choice(("out", "rw"))
            pool = floats if floats and (space == "rw" or rng.random() < 0.5) else ints
            b.op(f"store {space}[%{a}], {rng.choice(pool)}")


def _small_floats(floats: list) -> list:
    # Accumulators stay out of multiplication chains so values remain finite.
    return [f for f in floats if not f.startswith("%acc")] or ["0.5"]


def _region(b: _Builder, ints: list, floats: list, depth: int, start: str) -> str:
    """Emit a region starting in the open block ``start``; returns the open block at its end."""
    rng = b.rng
    _segment(b, ints, _small_floats(floats), rng.randint(1, 3))
    cur = start
    if rng.random() < 0.5:
        c = b.fresh("q")
        b.op(f"%{c} = icmp lt {rng.choice(ints)}, {rng.randint(0, 40)}")
        t, f, j = b.fresh("T"), b.fresh("F"), b.fresh("J")
        empty_else = rng.random() < 0.3
        b.op(f"br %{c}, {t}, {j if empty_else else f}")
        b.block(t)
        ti, tf = list(ints), list(_small_floats(floats))
        _segment(b, ti, tf, rng.randint(1, 3))
        vt_i, vt_f = rng.choice(ti), rng.choice(tf)
        b.op(f"jmp {j}")
        if empty_else:
            vf_i, vf_f, fl = rng.choice(ints), rng.choice(_small_floats(floats)), cur
        else:
            b.block(f)
            fi, ff = list(ints), list(_small_floats(floats))
            _segment(b, fi, ff, rng.randint(0, 2))
            vf_i, vf_f, fl = rng.choice(fi), rng.choice(ff), f
            b.op(f"jmp {j}")
        b.block(j)
        pi, pf = b.fresh("m"), b.fresh("g")
        b.op(f"%{pi} = phi [{t}: {vt_i}, {fl}: {vf_i}]")
        b.op(f"%{pf} = phi [{t}: {vt_f}, {fl}: {vf_f}]")
        ints.append(f"%{pi}")
        floats.append(f"%{pf}")
        cur = j
    if depth < 2 and rng.random() < (0.8 if depth == 0 else 0.4):
        cur = _loop(b, ints, floats, depth + 1, cur)
    _segment(b, ints, _small_floats(floats), rng.randint(0, 2))
    return cur


def _loop(b: _Builder, ints: list, floats: list, depth: int, pre: str) -> str:
    rng = b.rng
    h, body, x = b.fresh("H"), b.fresh("B"), b.fresh("X")
    i, i1, c = b.fresh("i"), b.fresh("i"), b.fresh("q")
    acc, acc1 = b.fresh("acc"), b.fresh("acc")
    ia, ia1 = b.fresh("ia"), b.fresh("ia")
    bound = "%n" if depth == 1 else str(rng.randint(1, 4))
    b.op(f"jmp {h}")
    b.block(h)
    latch = b.fresh("L")
    b.op(f"%{i} = phi [{pre}: 0, {latch}: %{i1}]")
    b.op(f"%{acc} = phi [{pre}: 0.0, {latch}: %{acc1}]")
    b.op(f"%{ia} = phi [{pre}: {rng.choice(ints)}, {latch}: %{ia1}]")
    b.op(f"%{c} = icmp lt %{i}, {bound}")
    b.op(f"br %{c}, {body}, {x}")
    b.block(body)
    bi, bf = ints + [f"%{i}", f"%{ia}"], floats + [f"%{acc}"]
    _region(b, bi, bf, depth, body)
    b.op(f"jmp {latch}")
    b.block(latch)
    b.op(f"%{i1} = iadd %{i}, 1")
    b.op(f"%{acc1} = fadd %{acc}, {rng.choice(_small_floats(bf))}")
    b.op(f"%{ia1} = {rng.choice(('iadd', 'ixor'))} %{ia}, {rng.choice(bi)}")
    b.op(f"jmp {h}")
    b.block(x)
    ints += [f"%{i}", f"%{ia}"]
    floats.append(f"%{acc}")
    a = b.fresh("a")
    b.op(f"%{a} = iand %{i}, 63")
    b.op(f"store out[%{a}], %{acc}")
    return x


def random_program(seed: int) -> Kernel:
    """A seeded structured program: up to two loop levels, diamonds, four spaces."""
    rng = random.Random(f"random:{seed}")
    b = _Builder(rng)
    fin_kind = rng.choice(("stream", "random"))
    b.lines += [
        "func rnd(n, s) {",
        f"  space fin elem=4 extent=64 readonly {fin_kind}",
        "  space iin elem=4 extent=64 readonly random",
        "  space out elem=4 extent=64",
        "  space rw elem=4 extent=64",
    ]
    b.block("entry")
    ints, floats = ["%n", "%s"], []
    end = _region(b, ints, floats, 0, "entry")
    if rng.random() < 0.5:
        end = _loop(b, ints, floats, 1, end)
    b.op(f"ret {rng.choice(ints)}")
    b.lines.append("}")
    prog = parse_ir("\n".join(b.lines) + "\n")
    mem = MemoryImage({
        "fin": [rng.random() for _ in range(64)],
        "iin": [rng.randrange(64) for _ in range(64)],
        "out": [0] * 64,
        "rw": [rng.random() for _ in range(64)],
    })
    return Kernel(None, prog, mem, (rng.randint(1, 12), rng.randint(0, 50)))
