import math
import random
from collections import OrderedDict

import pytest
from hypothesis import given, settings, strategies as st

from dataflow_hls.bench import KernelSpec, generate
from dataflow_hls.ir import MemSpace, interpret
from dataflow_hls.memory import CACHED, UNCACHED_BURST, CacheState, MemConfig, MemorySystem, coalesce
from dataflow_hls.sim import simulate_monolithic, simulate_pipeline
from dataflow_hls.partition import build_pipeline

SPACE = MemSpace("A", 4, 4096)


def runs(addresses):
    """Lengths of maximal unit-stride runs."""
    out = []
    for i, a in enumerate(addresses):
        if i and a == addresses[i - 1] + 1:
            out[-1] += 1
        else:
            out.append(1)
    return out


def test_coalesce_unit_stride():
    reqs = coalesce([("A", a, "R") for a in range(16)], 8)
    assert [(r.start, r.length) for r in reqs] == [(0, 8), (8, 8)]


def test_coalesce_strided():
    reqs = coalesce([("A", a, "R") for a in (0, 2, 4)], 8)
    assert [(r.start, r.length) for r in reqs] == [(0, 1), (2, 1), (4, 1)]


def test_coalesce_breaks_on_kind_and_space():
    trace = [("A", 0, "R"), ("A", 1, "W"), ("B", 2, "W"), ("B", 3, "W")]
    assert [(r.space, r.start, r.length) for r in coalesce(trace, 8)] == [("A", 0, 1), ("A", 1, 1), ("B", 2, 2)]


@pytest.mark.parametrize("burst_max", [1, 4, 16])
def test_spmv_vals_stream_replay(burst_max):
    k = generate(KernelSpec.at_scale("spmv", "tiny"))
    trace = [t for t in interpret(k.program, k.memory, k.args).trace if t[0] == "vals"]
    expected = sum(math.ceil(n / burst_max) for n in runs([a for _, a, _ in trace]))
    assert len(coalesce(trace, burst_max)) == expected


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 40), max_size=200), st.integers(1, 16))
def test_coalesce_oracle(addresses, burst_max):
    reqs = coalesce([("A", a, "R") for a in addresses], burst_max)
    assert len(reqs) == sum(math.ceil(n / burst_max) for n in runs(addresses))
    assert [a for r in reqs for a in range(r.start, r.start + r.length)] == addresses
    assert all(r.length <= burst_max for r in reqs)


def test_outstanding_limit_rejects():
    m = MemorySystem(MemConfig(max_outstanding=1), [SPACE])
    assert m.submit("A", 0, 1, 0, True, 0) is not None
    assert m.submit("A", 64, 1, 0, True, 0) is None


def test_cold_miss_completion():
    cfg = MemConfig(miss_latency=80)
    m = MemorySystem(cfg, [SPACE])
    _, completion, hit = m.submit("A", 0, 4, 0, True, 10)
    assert not hit and completion == 10 + 80 + 4 - 1


def test_second_read_after_fill_hits():
    cfg = MemConfig(hit_latency=2, miss_latency=80)
    m = MemorySystem(cfg, [SPACE])
    _, first, _ = m.submit("A", 0, 1, 0, True, 0)
    m.tick(first)
    _, second, hit = m.submit("A", 1, 1, 0, True, first + 5)
    assert hit and second == first + 5 + 2


def test_hit_on_pending_fill_waits_for_fill():
    m = MemorySystem(MemConfig(hit_latency=2, miss_latency=80), [SPACE])
    _, first, _ = m.submit("A", 0, 1, 0, True, 0)
    _, second, hit = m.submit("A", 1, 1, 0, True, 1)
    assert hit and second == first


def test_uncached_skips_cache():
    m = MemorySystem(MemConfig(miss_latency=50), [SPACE])
    _, c1, h1 = m.submit("A", 0, 8, 0, False, 0)
    m.tick(c1)
    _, c2, h2 = m.submit("A", 0, 8, 0, False, 100)
    assert not h1 and not h2 and c2 == 100 + 50 + 7
    assert m.stats()["uncached_requests"] == 2 and m.stats()["cache_hits"] == 0


def test_tick_idle():
    assert MemorySystem(MemConfig(), [SPACE]).tick(0) == []


def test_tick_one_delivery_per_port_per_cycle():
    m = MemorySystem(MemConfig(cache_enabled=False, miss_latency=10), [SPACE])
    a, ca, _ = m.submit("A", 0, 1, "p", False, 0)
    b, cb, _ = m.submit("A", 5, 1, "p", False, 0)
    assert ca == cb == 10
    assert m.tick(9) == []
    assert m.tick(10) == [a]
    assert m.tick(11) == [b]


def test_distinct_ports_deliver_together():
    m = MemorySystem(MemConfig(cache_enabled=False, miss_latency=10), [SPACE])
    a, _, _ = m.submit("A", 0, 1, "p", False, 0)
    b, _, _ = m.submit("A", 5, 1, "q", False, 0)
    assert m.tick(10) == [a, b]


def test_soak_thousand_requests():
    rng = random.Random(7)
    cfg = MemConfig(max_outstanding=6, miss_latency=30, hit_latency=2, cache_capacity=4096)
    m = MemorySystem(cfg, [SPACE])
    completion, delivered = {}, {}
    pending = 1000
    now = 0
    while pending or len(delivered) < len(completion):
        for rid in m.tick(now):
            assert rid not in delivered
            delivered[rid] = now
        for _ in range(rng.randint(0, 3)):
            if not pending:
                break
            out = m.submit("A", rng.randrange(4000), rng.randint(1, 8), rng.randrange(3),
                           rng.random() < 0.7, now)
            if out is None:
                continue
            rid, comp, _ = out
            completion[rid] = comp
            pending -= 1
        assert m.in_flight <= cfg.max_outstanding
        now += 1
    assert len(completion) == 1000 and set(delivered) == set(completion)
    assert all(delivered[r] >= completion[r] for r in completion)
    assert m.stats()["max_in_flight"] <= cfg.max_outstanding


def test_streaming_hit_ratio():
    cfg = MemConfig(line_size=64)
    m = MemorySystem(cfg, [SPACE])
    now = 0
    for a in range(1024):
        out = m.submit("A", a, 1, 0, True, now)
        assert out is not None
        m.tick(out[1])
        now = out[1] + 1
    s = m.stats()
    assert abs(s["hit_ratio"] - (64 // 4 - 1) / (64 // 4)) <= 0.01
    assert s["hit_ratio"] == pytest.approx(0.9375)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 9), max_size=120), st.integers(1, 4))
def test_lru_matches_reference_set(tags, ways):
    cache = CacheState(64 * ways * 8, 64, ways)
    ref = OrderedDict()
    for t in tags:
        line = t * cache.n_sets  # every line maps to set 0
        hit, _ = cache.access(line, 0, 0)
        expect = line in ref
        if expect:
            ref.move_to_end(line)
        else:
            if len(ref) >= ways:
                ref.popitem(last=False)
            ref[line] = True
        assert hit == expect
        assert cache.set_of(line) == list(ref)


@pytest.mark.parametrize("kind", ["spmv", "floyd_warshall"])
def test_cache_policy_does_not_change_values(kind):
    k = generate(KernelSpec.at_scale(kind, "tiny"))
    spaces = [s.name for s in k.program.spaces]
    pipe = build_pipeline(k.program)
    digests = set()
    for policy in (CACHED, UNCACHED_BURST):
        for enabled in (True, False):
            cfg = MemConfig(cache_enabled=enabled, policies={s: policy for s in spaces})
            digests.add(simulate_monolithic(k.program, cfg, k.memory, k.args).digest)
            digests.add(simulate_pipeline(pipe, cfg, k.memory, k.args).digest)
    assert len(digests) == 1


@pytest.mark.parametrize("bad", [dict(cache_capacity=1000), dict(burst_max=0), dict(max_outstanding=0),
                                 dict(policies={"A": "sometimes"})])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        MemConfig(**bad)
