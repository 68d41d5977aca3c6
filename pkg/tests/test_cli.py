"""Command-line surface: invocation shapes, file outputs, exit codes."""

import json
import subprocess
import sys

import pytest

from unetprune.cli import main

OK, VERIFY_FAILED, USAGE, BAD_FILE = 0, 1, 2, 3


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """A pre-built tiny model shared by the CLI tests (read-only files)."""
    root = tmp_path_factory.mktemp("cli")
    graph = root / "g.json"
    weights = root / "w.unpr"
    assert main(["build", "--arch", "pix2pix", "--nf", "8",
                 "--out", str(graph)]) == OK
    assert main(["init-weights", str(graph), "--seed", "7",
                 "--out", str(weights)]) == OK
    return root, graph, weights


def test_build_writes_valid_topology(work):
    _, graph, _ = work
    doc = json.loads(graph.read_text())
    assert set(doc) == {"arch", "nodes", "inputs", "output"}
    convs = [n for n in doc["nodes"] if n["kind"] in ("conv", "conv_transpose")]
    assert len(convs) == 16


def test_build_rejects_bad_input_size(tmp_path, capsys):
    code = main(["build", "--arch", "pix2pix", "--nf", "8",
                 "--input-size", "100x100", "--out", str(tmp_path / "x.json")])
    assert code == USAGE
    assert "divisible" in capsys.readouterr().err


def test_build_requires_exactly_one_width_flag(tmp_path):
    assert main(["build", "--arch", "pix2pix",
                 "--out", str(tmp_path / "x.json")]) == USAGE
    assert main(["build", "--arch", "pix2pix", "--nf", "8",
                 "--scales", "8,16,16",
                 "--out", str(tmp_path / "x.json")]) == USAGE


def test_build_wav2lip_scales(tmp_path):
    out = tmp_path / "w.json"
    assert main(["build", "--arch", "wav2lip", "--scales", "8,16,16",
                 "--out", str(out)]) == OK
    doc = json.loads(out.read_text())
    assert sorted(doc["inputs"]) == ["audio_in", "face_in"]
    # wav2lip input sizes come from the layer table, not a flag
    assert main(["build", "--arch", "wav2lip", "--scales", "8,16,16",
                 "--input-size", "96x96",
                 "--out", str(tmp_path / "y.json")]) == USAGE


def test_cost_on_graph_and_container(work, capsys):
    _, graph, weights = work
    assert main(["cost", str(graph)]) == OK
    text_from_graph = capsys.readouterr().out
    assert main(["cost", str(weights)]) == OK
    assert capsys.readouterr().out == text_from_graph
    assert "TOTAL" in text_from_graph
    assert main(["cost", str(graph), "--weights", str(weights)]) == OK
    capsys.readouterr()
    assert main(["cost", str(graph), "--csv"]) == OK
    assert capsys.readouterr().out.splitlines()[0] == "layer,params,macs"


def test_score_csv(work, capsys):
    _, _, weights = work
    assert main(["score", str(weights), "--criterion", "gm",
                 "--layer", "C8"]) == OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "layer,index,score"
    assert len(lines) == 1 + 64  # 8nF filters at nF=8
    assert main(["score", str(weights), "--layer", "nope"]) == USAGE


@pytest.mark.parametrize("args,check", [
    (["--mode", "uniform", "--ratio", "0.25"],
     lambda p: all("layer" in a for a in p["actions"])),
    (["--mode", "uniform+", "--ratio", "0.25"],
     lambda p: {a["layer"] for a in p["actions"]}.isdisjoint({"C1", "U2"})),
    (["--mode", "global-lamp", "--ratio", "0.05"],
     lambda p: p["criterion"] == "lamp"),
    (["--mode", "inner", "--layers", "C6=0.5,C7=0.5"],
     lambda p: {a["layer"] for a in p["actions"]} == {"C6", "C7"}),
    (["--preset", "facades-filter"],
     lambda p: {a["layer"] for a in p["actions"]} ==
     {"C6", "C7", "C8", "U8", "U7"}),
    (["--mode", "pairs", "--depth", "2"],
     lambda p: [a["pair"] for a in p["actions"]] ==
     [["C8", "U8"], ["C7", "U7"]]),
])
def test_plan_modes(work, tmp_path, args, check):
    _, _, weights = work
    out = tmp_path / "plan.json"
    assert main(["plan", str(weights), *args, "--out", str(out)]) == OK
    plan = json.loads(out.read_text())
    assert set(plan) == {"criterion", "actions"}
    assert check(plan)


def test_plan_usage_errors(work, tmp_path):
    _, _, weights = work
    out = str(tmp_path / "p.json")
    assert main(["plan", str(weights), "--out", out]) == USAGE  # no mode
    assert main(["plan", str(weights), "--mode", "uniform",
                 "--out", out]) == USAGE                        # no ratio
    assert main(["plan", str(weights), "--mode", "uniform", "--ratio", "1.5",
                 "--out", out]) == USAGE
    assert main(["plan", str(weights), "--mode", "inner",
                 "--layers", "C6:0.5", "--out", out]) == USAGE  # bad syntax


def test_prune_writes_container_and_sidecar(work, tmp_path, capsys):
    _, _, weights = work
    plan = tmp_path / "plan.json"
    pruned = tmp_path / "pruned.unpr"
    assert main(["plan", str(weights), "--preset", "e2s-filter",
                 "--out", str(plan)]) == OK
    assert main(["prune", str(weights), str(plan),
                 "--out", str(pruned)]) == OK
    assert "params" in capsys.readouterr().out  # reduction summary printed
    maps = json.loads((tmp_path / "pruned.unpr.maps.json").read_text())
    assert maps["C8"]["original_width"] == 64
    assert len(maps["C8"]["kept"]) == 32
    # the pruned container loads and reports fewer params
    assert main(["cost", str(pruned)]) == OK


def test_verify_pass_and_fail_exit_codes(work, tmp_path, capsys):
    _, _, weights = work
    plan = tmp_path / "plan.json"
    assert main(["plan", str(weights), "--mode", "uniform", "--ratio", "0.25",
                 "--out", str(plan)]) == OK
    assert main(["verify", str(weights), str(plan), "--probes", "3"]) == OK
    assert "PASS" in capsys.readouterr().out
    # an impossible tolerance forces the failure path
    code = main(["verify", str(weights), str(plan), "--probes", "2",
                 "--tol", "-1.0"])
    assert code == VERIFY_FAILED
    assert "FAIL" in capsys.readouterr().out


def test_cut_layers(work, tmp_path, capsys):
    _, _, weights = work
    out = tmp_path / "cut.unpr"
    assert main(["cut-layers", str(weights), "--depth", "2",
                 "--out", str(out)]) == OK
    capsys.readouterr()
    assert main(["cost", str(out), "--csv"]) == OK
    csv = capsys.readouterr().out
    assert "C8" not in csv and "C6" in csv


def test_sweep_csv_shape(work, tmp_path):
    _, _, weights = work
    out = tmp_path / "sweep.csv"
    assert main(["sweep", str(weights), "--ratios", "0.5", "--probes", "1",
                 "--out", str(out)]) == OK
    lines = out.read_text().splitlines()
    assert lines[0] == "layer,ratio,criterion,params,macs,divergence"
    assert len(lines) == 1 + 16


def test_bench_json_and_baseline(work, tmp_path, capsys):
    _, _, weights = work
    out = tmp_path / "bench.json"
    assert main(["bench", str(weights), "--runs", "3", "--warmup", "1",
                 "--out", str(out)]) == OK
    doc = json.loads(out.read_text())
    assert set(doc) == {"median_ms", "p90_ms", "runs"}
    assert doc["runs"] == 3
    capsys.readouterr()
    assert main(["bench", str(weights), "--runs", "3", "--warmup", "1",
                 "--baseline", str(out)]) == OK
    assert "speedup vs baseline" in capsys.readouterr().out


def test_bad_files_exit_3(work, tmp_path, capsys):
    _, graph, weights = work
    garbage = tmp_path / "bad.unpr"
    garbage.write_bytes(b"garbage here")
    assert main(["score", str(garbage)]) == BAD_FILE
    assert main(["cost", str(tmp_path / "missing.json")]) == BAD_FILE
    truncated = tmp_path / "trunc.unpr"
    truncated.write_bytes(weights.read_bytes()[:100])
    assert main(["score", str(truncated)]) == BAD_FILE
    notjson = tmp_path / "bad.json"
    notjson.write_text("{]")
    assert main(["cost", str(notjson)]) == BAD_FILE
    capsys.readouterr()


def test_bad_plan_exits_2(work, tmp_path, capsys):
    _, _, weights = work
    plan = tmp_path / "bad_plan.json"
    plan.write_text(json.dumps(
        {"criterion": "l2", "actions": [{"layer": "NOPE", "remove": [0]}]}))
    assert main(["prune", str(weights), str(plan),
                 "--out", str(tmp_path / "o.unpr")]) == USAGE
    plan.write_text(json.dumps(
        {"criterion": "l2", "actions": [{"layer": "U1", "remove": [0]}]}))
    assert main(["verify", str(weights), str(plan)]) == USAGE
    capsys.readouterr()


def test_help_documents_presets():
    with pytest.raises(SystemExit) as exc:
        main(["plan", "--help"])
    assert exc.value.code == 0


def test_console_script_entry_point(work):
    _, graph, _ = work
    proc = subprocess.run(
        [sys.executable, "-m", "unetprune.cli", "cost", str(graph)],
        capture_output=True, text=True)
    # module has no __main__ guard; use the installed script instead
    proc = subprocess.run(["unetprune", "cost", str(graph)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "TOTAL" in proc.stdout
