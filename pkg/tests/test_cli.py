"""End-to-end CLI tests via the click test runner."""
import json
import shutil

import pytest
from click.testing import CliRunner

from conftest import CORPUS
from wacg.cli import main

runner = CliRunner()


@pytest.fixture
def mini_corpus(tmp_path):
    """A three-case corpus copied out of the main one, for fast bench runs."""
    names = ["direct_calls", "const_index", "branch_index"]
    manifest = json.loads((CORPUS / "manifest.json").read_text())
    manifest["cases"] = [c for c in manifest["cases"] if c["name"] in names]
    for c in manifest["cases"]:
        shutil.copy(CORPUS / c["file"], tmp_path / c["file"])
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    return tmp_path


def test_analyze_json(tmp_path):
    res = runner.invoke(main, ["analyze", str(CORPUS / "const_index.wat")])
    assert res.exit_code == 0
    doc = json.loads(res.output)
    assert {(e["from"], e["to"]) for e in doc["edges"]} == {(2, 1)}


def test_analyze_dot_to_file(tmp_path):
    out = tmp_path / "g.dot"
    res = runner.invoke(main, ["analyze", str(CORPUS / "direct_calls.wat"),
                               "--format", "dot", "-o", str(out)])
    assert res.exit_code == 0
    assert out.read_text().startswith("digraph")


def test_analyze_rejects_invalid_module(tmp_path):
    bad = tmp_path / "bad.wat"
    bad.write_text("(module (func (result i32) i32.const 1 i32.add))")
    res = runner.invoke(main, ["analyze", str(bad)])
    assert res.exit_code == 1
    assert "validation" in res.output


def test_analyze_open_tables_adds_roots():
    path = str(CORPUS / "exported_table.wat")
    closed = json.loads(runner.invoke(main, ["analyze", path]).output)
    opened = json.loads(runner.invoke(main, ["analyze", path,
                                             "--open-tables"]).output)
    assert set(opened["roots"]) > set(closed["roots"])
    assert 1 in opened["roots"]  # $secret, reachable only through the table


def test_analyze_explicit_roots():
    path = str(CORPUS / "direct_calls.wat")
    doc = json.loads(runner.invoke(main, ["analyze", path,
                                          "--roots", "1"]).output)
    assert doc["roots"] == [1]
    assert {(e["from"], e["to"]) for e in doc["edges"]} == {(1, 0)}


def test_exec_prints_result_and_edges():
    res = runner.invoke(main, ["exec", str(CORPUS / "recursion_direct.wat"),
                               "fact", "4"])
    assert res.exit_code == 0
    lines = res.output.strip().splitlines()
    assert lines[-1] == "24"
    assert all("0 -> 0 @" in ln for ln in lines[:-1]) and len(lines) == 4


def test_exec_trap_exit_code():
    res = runner.invoke(main, ["exec", str(CORPUS / "oob_trap.wat"), "main"])
    assert res.exit_code == 2
    assert "trap" in res.output


def test_exec_fuel_exit_code():
    res = runner.invoke(main, ["exec", str(CORPUS / "divergent_loop.wat"),
                               "main", "--fuel", "500"])
    assert res.exit_code == 3
    assert "fuel" in res.output


def test_exec_unknown_entry():
    res = runner.invoke(main, ["exec", str(CORPUS / "direct_calls.wat"),
                               "nope"])
    assert res.exit_code == 1


def test_bench_writes_reports_and_figures(mini_corpus, tmp_path):
    report = tmp_path / "report.json"
    csv_path = tmp_path / "report.csv"
    figdir = tmp_path / "figs"
    res = runner.invoke(main, ["bench", str(mini_corpus),
                               "--report", str(report),
                               "--csv", str(csv_path),
                               "--figures", str(figdir)])
    assert res.exit_code == 0, res.output
    doc = json.loads(report.read_text())
    assert doc["totals"]["sound"] is True
    assert doc["totals"]["cases"] == 3
    assert csv_path.read_text().splitlines()[0].startswith("name,")
    pngs = sorted(p.name for p in figdir.glob("*.png"))
    assert pngs == ["edge_counts.png", "precision_ratio.png"]


def test_bench_report_is_byte_identical_across_runs(mini_corpus, tmp_path):
    outs = []
    for i in range(2):
        report = tmp_path / f"r{i}.json"
        res = runner.invoke(main, ["bench", str(mini_corpus),
                                   "--report", str(report)])
        assert res.exit_code == 0
        outs.append(report.read_bytes())
    assert outs[0] == outs[1]


def test_analyze_output_is_byte_identical_across_runs():
    path = str(CORPUS / "recursion_table.wat")
    a = runner.invoke(main, ["analyze", path]).output
    b = runner.invoke(main, ["analyze", path]).output
    assert a == b
