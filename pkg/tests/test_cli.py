import csv
import json
from pathlib import Path

import pytest

from dataflow_hls import cli
from dataflow_hls.config import RunConfig, apply, load_file, ConfigError
from dataflow_hls.report import TraceWindowError, render_gantt
from dataflow_hls.sim import DeadlockError

SCALE_LOOP = Path(__file__).parent / "fixtures" / "scale_loop.ir"


def run(*argv):
    return cli.main(["run", *map(str, argv)])


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_spmv_desk_end_to_end(tmp_path):
    assert run("--kernel", "spmv", "--scale", "desk", "--out", tmp_path, "--dump-cdfg") == 0
    for name in ("manifest.json", "report_monolithic.json", "report_pipeline.json", "comparison.csv",
                 "summary.txt", "cdfg.dot"):
        assert (tmp_path / name).exists(), name
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(list((tmp_path / "stages").glob("*.ir"))) == len(manifest["stages"])
    mono = json.loads((tmp_path / "report_monolithic.json").read_text())
    pipe = json.loads((tmp_path / "report_pipeline.json").read_text())
    assert mono["outputs"]["digest"] == pipe["outputs"]["digest"]
    assert "status: ok" in (tmp_path / "summary.txt").read_text()


def test_speedup_is_ratio_of_reports(tmp_path):
    assert run("--kernel", "knapsack", "--scale", "tiny", "--out", tmp_path) == 0
    rows = list(csv.DictReader((tmp_path / "comparison.csv").open()))
    cycles = {r["engine"]: int(r["total_cycles"]) for r in rows}
    mono = json.loads((tmp_path / "report_monolithic.json").read_text())["total_cycles"]
    pipe = json.loads((tmp_path / "report_pipeline.json").read_text())["total_cycles"]
    assert cycles == {"monolithic": mono, "pipeline": pipe}
    assert rows[1]["speedup"] == f"{mono / pipe:.6f}"


def test_reports_carry_resolved_config(tmp_path):
    assert run("--kernel", "dfs", "--scale", "tiny", "--out", tmp_path, "--set", "latency.fmul=6",
               "--set", "miss_latency=33") == 0
    cfg = json.loads((tmp_path / "report_pipeline.json").read_text())["config"]
    assert cfg["memory"]["miss_latency"] == 33 and cfg["latency"]["fmul"] == [6, True]
    assert cfg["input"] == {"kernel": "dfs", "ir_file": None, "args": [], "scale": "tiny", "seed": 0}


def test_unknown_config_key(tmp_path, capsys):
    bad = tmp_path / "run.cfg"
    bad.write_text("miss_latency = 40\nwarp_factor = 9\n")
    assert run("--kernel", "spmv", "--scale", "tiny", "--config", bad, "--out", tmp_path / "o") == 2
    assert "warp_factor" in capsys.readouterr().err


@pytest.mark.parametrize("override", ["latency.fmul=fast", "policy.x=sometimes", "latency.bogus=3",
                                      "fifo_depth=0", "cache_capacity=1000"])
def test_bad_values_exit_2(tmp_path, override):
    assert run("--kernel", "spmv", "--scale", "tiny", "--set", override, "--out", tmp_path) == 2


def test_cli_overrides_config_file(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# sweep base\nkernel = dfs\nscale = tiny\nfifo_depth = 4\nmiss_latency = 12\n")
    cfg = RunConfig()
    load_file(cfg, f)
    assert (cfg.kernel, cfg.fifo_depth, cfg.mem["miss_latency"]) == ("dfs", 4, 12)
    assert run("--config", f, "--fifo-depth", "7", "--out", tmp_path / "o") == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert {c["depth"] for c in manifest["channels"]} == {7}


def test_apply_rejects_unknown():
    with pytest.raises(ConfigError, match="nope"):
        apply(RunConfig(), "nope", "1")


def test_monolithic_only(tmp_path):
    assert run("--kernel", "spmv", "--scale", "tiny", "--engines", "monolithic", "--out", tmp_path) == 0
    assert not (tmp_path / "manifest.json").exists()
    assert not (tmp_path / "report_pipeline.json").exists()
    assert not (tmp_path / "stages").exists()
    assert "pipeline: skipped" in (tmp_path / "summary.txt").read_text()


def test_mismatch_exit_3(tmp_path, monkeypatch):
    real = cli.simulate_pipeline

    def corrupt(*args, **kwargs):
        r = real(*args, **kwargs)
        r.digest = "0" * 16
        return r

    monkeypatch.setattr(cli, "simulate_pipeline", corrupt)
    assert run("--kernel", "spmv", "--scale", "tiny", "--out", tmp_path) == 3
    assert "mismatch" in (tmp_path / "summary.txt").read_text()


def test_deadlock_exit_4(tmp_path, monkeypatch, capsys):
    def stuck(*args, **kwargs):
        raise DeadlockError(42, ["spmv.s3:fifo_empty"])

    monkeypatch.setattr(cli, "simulate_pipeline", stuck)
    assert run("--kernel", "spmv", "--scale", "tiny", "--out", tmp_path) == 4
    assert "spmv.s3" in capsys.readouterr().err


def test_ir_file_with_memory(tmp_path):
    mem = tmp_path / "mem.json"
    mem.write_text(json.dumps({"a": [1.5] * 64}))
    assert run("--ir-file", SCALE_LOOP, "--args", "8,2.0", "--memory", mem, "--out", tmp_path / "o") == 0
    report = json.loads((tmp_path / "o" / "report_pipeline.json").read_text())
    assert report["outputs"]["return_value"] == 0
    assert run("--ir-file", SCALE_LOOP, "--args", "8", "--out", tmp_path / "p") == 2


def test_trace_and_gantt(tmp_path):
    assert run("--kernel", "spmv", "--scale", "tiny", "--trace", "--gantt-window", "0:50",
               "--out", tmp_path) == 0
    text = (tmp_path / "gantt_pipeline.txt").read_text()
    assert text.splitlines()[0] == "cycles 0..50"
    assert len(text.splitlines()) == 3 + 8
    assert cli.main(["gantt", str(tmp_path / "trace_pipeline.csv"), "--window", "10:20"]) == 0


def test_sweep_layout(tmp_path):
    assert run("--kernel", "spmv", "--scale", "tiny", "--sweep", "miss_latency=20,200", "--out", tmp_path) == 0
    assert (tmp_path / "miss_latency=20" / "report_pipeline.json").exists()
    rows = list(csv.DictReader((tmp_path / "comparison.csv").open()))
    assert [(r["sweep_value"], r["engine"]) for r in rows] == [
        ("20", "monolithic"), ("20", "pipeline"), ("200", "monolithic"), ("200", "pipeline")]


def test_rerun_is_byte_identical(tmp_path):
    args = ("--kernel", "floyd_warshall", "--scale", "tiny", "--trace", "--dump-cdfg")
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")


ROWS = [(c, 0, "busy") for c in range(10)]


def test_gantt_empty_window():
    assert render_gantt(ROWS, (4, 4)).splitlines() == ["cycles 4..4", render_gantt(ROWS, (0, 0)).splitlines()[1]]


def test_gantt_all_busy():
    lines = render_gantt(ROWS, (0, 10)).splitlines()
    assert lines[-1] == "stage0 |##########|"


def test_gantt_glyphs_and_names():
    rows = [(0, 0, "mem"), (0, 1, "fifo_full"), (1, 0, "fifo_empty"), (1, 1, "idle")]
    lines = render_gantt(rows, (0, 2), ["load", "mul"]).splitlines()
    assert lines[-2:] == ["load |ME|", "mul  |F.|"]


@pytest.mark.parametrize("window", [(5, 11), (11, 12), (-1, 3), (6, 3)])
def test_gantt_window_outside_trace(window):
    with pytest.raises(TraceWindowError):
        render_gantt(ROWS, window)


def test_gantt_reads_csv(tmp_path):
    f = tmp_path / "t.csv"
    f.write_text("cycle,stage,state\n" + "".join(f"{c},{s},{st}\n" for c, s, st in ROWS))
    assert render_gantt(f, (0, 10)) == render_gantt(ROWS, (0, 10))


def test_kernels_listing(capsys):
    assert cli.main(["kernels"]) == 0
    out = capsys.readouterr().out
    assert all(k in out for k in ("spmv", "knapsack", "floyd_warshall", "dfs"))
