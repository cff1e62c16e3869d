import json
import os
import subprocess
import sys

import pytest

from magpie_sim.cli import main
from conftest import FIXTURES


def test_run_single(scenarios_dir, tmp_path):
    assert main(["run", str(scenarios_dir / "tower.json"), "--out", str(tmp_path)]) == 0
    rep = [json.loads(l) for l in (tmp_path / "reports.jsonl").read_text().splitlines()]
    assert len(rep) == 1 and rep[0]["success"] and rep[0]["seed"] == 7
    events = [json.loads(l) for l in (tmp_path / "events.jsonl").read_text().splitlines()]
    assert events and all(e["seed"] == 7 for e in events)
    assert not (tmp_path / "summary.json").exists()


def test_run_failure_exit_code(scenarios_dir, tmp_path):
    assert main(["run", str(scenarios_dir / "tower_outofview.json"), "--out", str(tmp_path)]) == 2
    rep = json.loads((tmp_path / "reports.jsonl").read_text())
    assert rep["failure_reason"] == "ObjectLost"


def test_run_batch_override(scenarios_dir, tmp_path):
    assert main(["run", str(scenarios_dir / "tower.json"), "--batch", "3", "--seed", "100",
                 "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["episodes"] == 3 and summary["successes"] == 3
    seeds = [json.loads(l)["seed"] for l in (tmp_path / "reports.jsonl").read_text().splitlines()]
    assert seeds == [100, 101, 102]


def test_plan(capsys):
    code = main(["plan", str(FIXTURES / "blocksworld-domain.pddl"), str(FIXTURES / "blocksworld-2.pddl")])
    out = capsys.readouterr().out
    assert code == 0 and out.startswith("; cost = ")


def test_plan_errors(capsys):
    code = main(["plan", str(FIXTURES / "blocksworld-domain.pddl"), str(FIXTURES / "reject-metric-problem.pddl")])
    err = capsys.readouterr().err
    assert code == 1 and "reject-metric-problem.pddl:6:4: unsupported PDDL feature: metric" in err
    assert main(["plan", "nope.pddl", "nope.pddl"]) == 1


def test_dump_bt(scenarios_dir, tmp_path):
    out = tmp_path / "bt.dot"
    assert main(["dump", str(scenarios_dir / "tower.json"), "--bt", "--out", str(out)]) == 0
    dot = out.read_text()
    assert dot.startswith("digraph BT") and dot.count("[label=") == 13


def test_dump_cloud(scenarios_dir, tmp_path):
    out = tmp_path / "c.ply"
    assert main(["dump", str(scenarios_dir / "tower.json"), "--cloud", "--out", str(out)]) == 0
    head = out.read_text().splitlines()[:8]
    assert head[0] == "ply" and "comment label 0 blue" in head
    assert main(["dump", str(scenarios_dir / "empty.json"), "--cloud", "--out", str(out)]) == 0
    assert "element vertex 0" in out.read_text()


def test_dump_force_trace(scenarios_dir, tmp_path, capsys):
    out = tmp_path / "f.csv"
    assert main(["dump", str(scenarios_dir / "grasp_offcenter.json"), "--force-trace", "--out", str(out)]) == 0
    info = json.loads(capsys.readouterr().out.splitlines()[0])
    assert info["first"] == "right"
    assert info["contact_aperture_right"] - info["contact_aperture_left"] == pytest.approx(20.0)
    assert out.read_text().startswith("time,aperture_mm,force_left_N,force_right_N\n")


def test_validate(scenarios_dir, tmp_path, capsys):
    assert main(["validate", str(scenarios_dir / "batch.json")]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"version": 1, "objects": [], "goal": ["(on a b)"]}))
    assert main(["validate", str(bad)]) == 1
    assert "goal[0]" in capsys.readouterr().err


def test_usage_errors(scenarios_dir):
    assert main([]) == 1
    assert main(["run", str(scenarios_dir / "tower.json"), "--jobs", "0"]) == 1
    assert main(["dump", str(scenarios_dir / "tower.json")]) == 1


def test_module_entry_point(scenarios_dir, tmp_path):
    env = {**os.environ, "MAGPIE_SIM_LOG": "ERROR"}
    proc = subprocess.run([sys.executable, "-m", "magpie_sim", "run", str(scenarios_dir / "tower_knock.json"),
                           "--out", str(tmp_path)], capture_output=True, text=True, env=env, timeout=120)
    assert proc.returncode == 0, proc.stderr
    rep = json.loads((tmp_path / "reports.jsonl").read_text())
    assert rep["plans_computed"] >= 2


def test_plan_satisfied_and_unsolvable(capsys, tmp_path):
    dom = str(FIXTURES / "blocksworld-domain.pddl")
    assert main(["plan", dom, str(FIXTURES / "blocksworld-satisfied.pddl")]) == 0
    assert capsys.readouterr().out == "; cost = 0\n"
    prob = tmp_path / "loop.pddl"
    prob.write_text("(define (problem loop) (:domain blocksworld) (:objects a - block)"
                    " (:init (ontable a) (clear a) (handempty)) (:goal (on a a)))")
    assert main(["plan", dom, str(prob)]) == 2
    assert capsys.readouterr().out == "unsolvable\n"


def test_plan_two_blocks_is_two_lines(capsys):
    main(["plan", str(FIXTURES / "blocksworld-domain.pddl"), str(FIXTURES / "blocksworld-2.pddl")])
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "; cost = 2" and len(lines) == 3
