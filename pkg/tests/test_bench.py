import pytest

from dataflow_hls.bench import KINDS, SCALES, KernelSpec, generate, kernel_catalog, random_program
from dataflow_hls.ir import interpret, print_ir
from dataflow_hls.partition import build_pipeline


def test_full_scale_matches_published_sizes():
    assert SCALES["full"]["spmv"] == {"n": 4096, "density": 0.25}
    assert SCALES["full"]["knapsack"] == {"capacity": 3200, "items": 200}


def test_desk_defaults():
    desk = SCALES["desk"]
    assert desk["spmv"] == {"n": 256, "density": 0.25}
    assert desk["knapsack"] == {"capacity": 256, "items": 32}
    assert desk["floyd_warshall"] == {"n": 64}
    assert desk["dfs"] == {"nodes": 500, "degree": 20}


def test_catalog():
    cat = kernel_catalog()
    assert [kind for kind, _, _ in cat] == list(KINDS) and len(cat) == 4
    notes = {kind: note for kind, _, note in cat}
    assert "dependence cycle" in notes["dfs"] and "memory" in notes["dfs"]
    assert "no_loop_carried" in notes["knapsack"]


@pytest.mark.parametrize("bad", [
    dict(kind="matmul", params=()),
    dict(kind="spmv", params=(("density", 0.25), ("n", 0))),
    dict(kind="spmv", params=(("density", 1.5), ("n", 8))),
])
def test_invalid_specs(bad):
    with pytest.raises(ValueError):
        KernelSpec(**bad)


def test_unknown_override():
    with pytest.raises(ValueError):
        KernelSpec.at_scale("dfs", "tiny", colour=3)


@pytest.mark.parametrize("kind", KINDS)
def test_generation_deterministic(kind):
    a = generate(KernelSpec.at_scale(kind, "desk", 4))
    b = generate(KernelSpec.at_scale(kind, "desk", 4))
    assert print_ir(a.program) == print_ir(b.program)
    assert a.memory == b.memory and a.args == b.args
    c = generate(KernelSpec.at_scale(kind, "desk", 5))
    assert c.memory != a.memory


def test_random_programs_deterministic():
    assert print_ir(random_program(11).program) == print_ir(random_program(11).program)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", range(20))
def test_oracle_agreement_desk(kind, seed):
    k = generate(KernelSpec.at_scale(kind, "desk", seed))
    r = interpret(k.program, k.memory, k.args, trace=False)
    assert k.check(r.memory, r.value)


@pytest.mark.parametrize("kind", ["spmv", "knapsack", "floyd_warshall"])
def test_plans_have_three_or_more_stages(kind):
    assert len(build_pipeline(generate(KernelSpec.at_scale(kind, "desk")).program).stages) >= 3


def test_dfs_stack_cycle_in_one_stage():
    pipe = build_pipeline(generate(KernelSpec.at_scale("dfs", "desk")).program)
    homes = {pipe.plan.stage_of[n] for n in pipe.cdfg.nodes
             if pipe.cdfg.block_of[n] != "entry" and pipe.cdfg.instruction(n).space == "stack"}
    assert len(homes) == 1
