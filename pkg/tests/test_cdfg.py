import dataclasses
from itertools import product

import pytest
from hypothesis import given, settings, strategies as st

from dataflow_hls.bench import KernelSpec, generate, random_program
from dataflow_hls.cdfg import _tarjan, build_cdfg, condense_and_sort, find_sccs, is_topological
from dataflow_hls.ir import Program, parse_ir

COUNTER = """func f(n) {
block entry:
  jmp head
block head:
  %i = phi [entry: 0, head: %inc]
  %inc = iadd %i, 1
  %c = icmp lt %inc, %n
  br %c, head, done
block done:
  ret %i
}"""


def reach(nodes, succ):
    """Brute-force transitive closure."""
    r = {n: {n} for n in nodes}
    changed = True
    while changed:
        changed = False
        for n in nodes:
            new = set().union(*(r[m] for m in succ.get(n, ()))) | r[n]
            if new != r[n]:
                r[n] = new
                changed = True
    return r


def node_of(g, text):
    return next(n for n in g.nodes if str(g.instruction(n)).startswith(text))


def test_straight_line():
    g = build_cdfg(parse_ir("func f(x) {\nblock entry:\n  %a = iadd %x, 1\n  %b = imul %a, 2\n  ret %b\n}"))
    assert len(g.nodes) == 2
    assert [(e.kind, e.loop_carried) for e in g.edges] == [("data", False)]
    assert not any(find_sccs(g).cyclic)


def test_counter_cycle():
    g = build_cdfg(parse_ir(COUNTER))
    phi, inc = node_of(g, "%i = phi"), node_of(g, "%inc")
    carried = [e for e in g.edges if e.src == inc and e.dst == phi]
    assert carried and carried[0].kind == "data" and carried[0].loop_carried
    s = find_sccs(g)
    comp = s.components[s.comp_of[phi]]
    assert inc in comp


def test_counter_pair_latency():
    text = """func f(n) {
block entry:
  jmp head
block head:
  %i = phi [entry: 0, head: %inc]
  %inc = iadd %i, 1
  %c = icmp lt %i, %n
  br %c, head, done
block done:
  ret %i
}"""
    g = build_cdfg(parse_ir(text))
    s = find_sccs(g)
    c = s.comp_of[node_of(g, "%i = phi")]
    data_only = {n for n in s.components[c] if g.instruction(n).opcode in ("phi", "iadd")}
    assert data_only == {node_of(g, "%i = phi"), node_of(g, "%inc")}
    assert not s.has_long[c]
    # the loop branch joins the component through control edges but adds no latency
    assert s.cycle_latency[c] == 2


def test_accumulator_component():
    text = """func f(n, t) {
block entry:
  jmp head
block head:
  %i = phi [entry: 0, head: %i1]
  %s = phi [entry: 0.0, head: %s2]
  %s2 = fadd %s, %t
  %i1 = iadd %i, 1
  %c = icmp lt %i1, %n
  br %c, head, done
block done:
  ret %s2
}"""
    g = build_cdfg(parse_ir(text))
    s = find_sccs(g)
    c = s.comp_of[node_of(g, "%s2")]
    assert s.components[c] == {node_of(g, "%s = phi"), node_of(g, "%s2")}
    assert s.has_long[c] and s.cycle_latency[c] == 5


def test_dfs_stack_cycle_through_memory():
    g = build_cdfg(generate(KernelSpec.at_scale("dfs", "tiny")).program)
    in_loop = [n for n in g.nodes if g.block_of[n] != "entry" and g.instruction(n).space == "stack"]
    loads = [n for n in in_loop if g.instruction(n).opcode == "load"]
    stores = [n for n in in_loop if g.instruction(n).opcode == "store"]
    assert loads and stores
    mem = {(e.src, e.dst) for e in g.edges if e.kind == "memord"}
    assert any((l, w) in mem for l in loads for w in stores)
    assert any((w, l) in mem for l in loads for w in stores)
    s = find_sccs(g)
    assert len({s.comp_of[n] for n in loads + stores}) == 1


def test_chain_of_five():
    nodes = list(range(5))
    comps = _tarjan(nodes, {i: [i + 1] for i in range(4)} | {4: []})
    assert sorted(map(sorted, comps)) == [[i] for i in range(5)]


def test_chain_order_and_tie_break():
    g = build_cdfg(parse_ir("""func f(x, y) {
block entry:
  %a = iadd %x, 1
  %b = iadd %y, 1
  %c = iadd %a, %b
  ret %c
}"""))
    s = find_sccs(g)
    dag = condense_and_sort(g, s)
    order = [min(s.components[c]) for c in dag.topo_order]
    assert order == [0, 1, 2]


def test_spmv_component_order():
    p = generate(KernelSpec.at_scale("spmv", "tiny")).program
    g = build_cdfg(p)
    s = find_sccs(g)
    dag = condense_and_sort(g, s)
    where = {c: i for i, c in enumerate(dag.topo_order)}

    def comp(prefix):
        return s.comp_of[node_of(g, prefix)]

    idx = comp("%col = load col_idx")
    val = comp("%xv = load x")
    acc = comp("%acc1 = fadd")
    assert where[idx] < where[val] < where[acc]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 50).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)),
                                             max_size=3 * n))))
def test_tarjan_matches_reachability(graph):
    n, edges = graph
    nodes = list(range(n))
    succ = {i: [] for i in nodes}
    for a, b in edges:
        if b not in succ[a]:
            succ[a].append(b)
    r = reach(nodes, succ)
    comp_of = {v: i for i, c in enumerate(_tarjan(nodes, succ)) for v in c}
    for u, v in product(nodes, nodes):
        assert (comp_of[u] == comp_of[v]) == (v in r[u] and u in r[v])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_random_program_condensation(seed):
    g = build_cdfg(random_program(seed).program)
    s = find_sccs(g)
    seen = [n for c in s.components for n in c]
    assert sorted(seen) == sorted(g.nodes)
    dag = condense_and_sort(g, s)
    assert all(c not in dag.succ[c] for c in dag.succ)
    assert is_topological(dag)
    r = reach(g.nodes, g.succ)
    for u in g.nodes:
        for v in g.nodes:
            assert (s.comp_of[u] == s.comp_of[v]) == (v in r[u] and u in r[v])


def strip_annotation(p: Program, tag: str) -> Program:
    spaces = tuple(dataclasses.replace(sp, annotations=sp.annotations - {tag}) for sp in p.spaces)
    return dataclasses.replace(p, spaces=spaces)


@pytest.mark.parametrize("kind", ["knapsack", "floyd_warshall"])
def test_no_loop_carried_only_splits(kind):
    p = generate(KernelSpec.at_scale(kind, "tiny")).program
    with_tag = find_sccs(build_cdfg(p))
    without = find_sccs(build_cdfg(strip_annotation(p, "no_loop_carried")))
    for comp in with_tag.components:
        homes = {without.comp_of[n] for n in comp}
        assert len(homes) == 1
    assert len(with_tag.components) >= len(without.components)


def test_dot_dump_lists_edges():
    g = build_cdfg(parse_ir(COUNTER))
    text = g.dump()
    assert text.startswith("digraph f {")
    assert "[data, carried]" in text
