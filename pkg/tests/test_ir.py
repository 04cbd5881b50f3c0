import pytest
from hypothesis import given, settings, strategies as st

from dataflow_hls.bench import KernelSpec, generate, random_program
from dataflow_hls.ir import (
    FuelExhausted, LatencyTable, MemoryImage, ParseError, Trap, interpret, is_long,
    opcode_latency, parse_ir, print_ir, validate,
)


def rules(text):
    with pytest.raises(ParseError) as err:
        parse_ir(text)
    return " | ".join(d.message for d in err.value.diagnostics)


def test_minimal_block():
    p = parse_ir("func f(x) {\nblock entry:\n  %a = iadd %x, 1\n  ret %a\n}\n")
    assert len(p.blocks) == 1
    assert len(p.blocks[0].instructions) == 2


def test_phi_from_non_predecessor():
    text = """func f(n) {
block entry:
  br %n, head, other
block head:
  %i = phi [entry: 0, other: 1]
  ret %i
block other:
  ret 0
}"""
    assert "phi incoming block not a predecessor" in rules(text)


def test_store_to_readonly():
    text = "func f() {\n  space a elem=4 extent=4 readonly\nblock entry:\n  store a[0], 1\n  ret\n}"
    assert "store to readonly space" in rules(text)


def test_use_before_definition():
    text = "func f() {\nblock entry:\n  %b = iadd %a, 1\n  %a = iadd 1, 1\n  ret %b\n}"
    assert "SSA dominance" in rules(text)


@pytest.mark.parametrize("text, needle", [
    ("func f() {\nblock entry:\n  %a = frobnicate 1, 2\n  ret %a\n}", "frobnicate"),
    ("func f() {\nblock entry:\n  %a = load nope[0]\n  ret %a\n}", "undeclared space"),
    ("func f() {\nblock entry:\n  jmp missing\n}", "undeclared label"),
    ("func f() {\nblock entry:\n  %a = iadd 1, 1\n  %a = iadd 2, 2\n  ret %a\n}", "SSA single definition"),
])
def test_diagnostics(text, needle):
    assert needle in rules(text)


def test_diagnostics_carry_lines():
    with pytest.raises(ParseError) as err:
        parse_ir("func f() {\nblock entry:\n  %b = iadd %a, 1\n  ret %b\n}")
    assert all(d.line > 0 for d in err.value.diagnostics)


def test_spmv_shape_and_round_trip():
    p = generate(KernelSpec.at_scale("spmv", "tiny")).program
    names = {s.name for s in p.spaces}
    assert {"row_ptr", "col_idx", "vals", "x"} <= names and len(names) == 5
    from dataflow_hls.cfg import find_loops
    loops = find_loops(p.succ, p.entry)
    assert len(loops) == 2
    text = print_ir(p)
    assert print_ir(parse_ir(text)) == text


@pytest.mark.parametrize("kind", ["spmv", "knapsack", "floyd_warshall", "dfs"])
def test_benchmarks_validate(kind):
    assert validate(generate(KernelSpec.at_scale(kind, "tiny")).program) == []


def test_store_then_load():
    p = parse_ir("""func f() {
  space A elem=4 extent=4
block entry:
  store A[0], 7
  %v = load A[0]
  ret %v
}""")
    r = interpret(p, MemoryImage.zeros(p))
    assert r.value == 7
    assert r.trace == [("A", 0, "W"), ("A", 0, "R")]


def test_fuel_exhaustion():
    p = parse_ir("func f() {\nblock entry:\n  jmp loop\nblock loop:\n  jmp loop\n}")
    with pytest.raises(FuelExhausted):
        interpret(p, MemoryImage.zeros(p), fuel=10)


@pytest.mark.parametrize("body", ["%v = load A[4]", "%v = load A[-1]"])
def test_out_of_bounds_traps(body):
    p = parse_ir(f"func f() {{\n  space A elem=4 extent=4\nblock entry:\n  {body}\n  ret %v\n}}")
    with pytest.raises(Trap, match="A"):
        interpret(p, MemoryImage.zeros(p))


def test_integer_division_by_zero_traps():
    p = parse_ir("func f(x) {\nblock entry:\n  %v = fdiv 1.0, %x\n  ret %v\n}")
    with pytest.raises(Trap):
        interpret(p, MemoryImage.zeros(p), (0,))


def test_integer_wraparound():
    p = parse_ir("func f(x) {\nblock entry:\n  %v = iadd %x, 1\n  ret %v\n}")
    assert interpret(p, MemoryImage.zeros(p), (2**31 - 1,)).value == -2**31


def test_knapsack_matches_host_oracle():
    k = generate(KernelSpec.at_scale("knapsack", "desk", seed=3, capacity=32, items=8))
    r = interpret(k.program, k.memory, k.args, trace=False)
    assert k.check(r.memory, r.value)


def test_latency_defaults():
    t = LatencyTable.default()
    assert opcode_latency("fmul", t) == (4, True)
    assert opcode_latency("iadd", t) == (1, True)
    assert opcode_latency("fadd", t) == (4, True)
    assert opcode_latency("fdiv", t) == (16, False)
    assert is_long("fmul", t) and not is_long("iadd", t)
    with pytest.raises(ValueError):
        opcode_latency("br", t)


def test_latency_overrides():
    t = LatencyTable.default().with_overrides({"fmul": 6, "fdiv": (8, True)})
    assert t["fmul"] == (6, True) and t["fdiv"] == (8, True)
    with pytest.raises(KeyError):
        LatencyTable.default().with_overrides({"nope": 2})
    with pytest.raises(ValueError):
        LatencyTable.default().with_overrides({"iadd": 0})


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_print_parse_fixpoint(seed):
    p = random_program(seed).program
    text = print_ir(p)
    again = parse_ir(text)
    assert print_ir(again) == text
    assert validate(again) == []


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_interpret_deterministic(seed):
    k = random_program(seed)
    a = interpret(k.program, k.memory, k.args)
    b = interpret(k.program, k.memory, k.args)
    assert a.memory == b.memory and a.trace == b.trace and a.value == b.value
