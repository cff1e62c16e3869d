import dataclasses
import json

import pytest

from magpie_sim.executive import (EpisodeConfig, GoalObjectMissing, UnrecoverableNoise,
                                  build_problem, perceive, run_batch, run_episode, summarize)
from magpie_sim.pddl import Atom, Literal
from magpie_sim.perception import DetectionNoise
from magpie_sim.scenario import ConfigError, load_scenario, scenario_from_dict
from magpie_sim.world import Perturbation, Trigger, build_scene, ground_truth_facts

ON_RG = Atom("on", ("red", "green"))


@pytest.fixture
def tower_cfg(scenarios_dir):
    return load_scenario(scenarios_dir / "tower.json").episode_config()


# -- problem construction ------------------------------------------------------------

def test_build_problem_from_facts():
    facts = {Atom("ontable", ("a",)), Atom("clear", ("a",)), Atom("handempty", ())}
    p = build_problem(facts, [Atom("ontable", ("a",))])
    assert p.objects == (("a", "block"),)
    assert p.init == frozenset(facts)
    assert p.goal == (Literal(Atom("ontable", ("a",))),)


def test_build_problem_missing_goal_object():
    with pytest.raises(GoalObjectMissing):
        build_problem({Atom("clear", ("a",))}, [Atom("on", ("a", "z"))])


def test_build_problem_drops_foreign_atoms():
    facts = {Atom("clear", ("a",)), Atom("glowing", ("a",)), Atom("on", ("a", "ghost"))}
    p = build_problem(facts, [], objects=["a"])
    assert p.init == {Atom("clear", ("a",))}


def test_perceive_matches_ground_truth(tower_cfg):
    scene = tower_cfg.scene.copy()
    pc = perceive(scene, DetectionNoise(), 0)
    assert pc.labels == ("blue", "green", "red")
    assert pc.facts == ground_truth_facts(scene)


# -- episodes -------------------------------------------------------------------------

def test_tower_episode(tower_cfg):
    events = []
    r = run_episode(tower_cfg, events)
    assert r.success and r.plans_computed == 1 and r.failures == []
    assert r.goal_in_ground_truth
    assert r.actions_executed == 2  # red already sits on green: pick-up blue, stack blue red
    kinds = [e["event"] for e in events]
    assert kinds[0] == "perceive" and kinds[-1] == "end"
    assert [e["t"] for e in events] == sorted(e["t"] for e in events)


def test_goal_already_true_still_plans_once(tower_cfg):
    cfg = dataclasses.replace(tower_cfg, goal=(ON_RG,))
    r = run_episode(cfg)
    assert r.success and r.plans_computed == 1 and r.actions_executed == 0


def test_knock_tower_recovers(scenarios_dir):
    cfg = load_scenario(scenarios_dir / "tower_knock.json").episode_config()
    r = run_episode(cfg)
    assert r.success and r.plans_computed >= 2
    assert r.goal_in_ground_truth
    assert r.plans_computed == 1 + len(r.failures)


def test_displace_recovers(tower_cfg):
    p = Perturbation("displace", Trigger(after_action=2), "blue", (-140.0, 60.0, 0.0, 0.5))
    r = run_episode(dataclasses.replace(tower_cfg, perturbations=(p,)))
    assert r.success and r.plans_computed >= 2
    assert r.goal_in_ground_truth


def test_remove_from_view_is_object_lost(scenarios_dir):
    cfg = load_scenario(scenarios_dir / "tower_outofview.json").episode_config()
    r = run_episode(cfg)
    assert not r.success and r.failure_reason == "ObjectLost"


def test_unsolvable(tower_cfg):
    cfg = dataclasses.replace(tower_cfg, goal=(Atom("on", ("red", "red")),))
    r = run_episode(cfg)
    assert not r.success and r.failure_reason == "Unsolvable" and r.plans_computed == 0


def test_planner_resource_limit(tower_cfg):
    r = run_episode(dataclasses.replace(tower_cfg, max_expansions=1, strategy="astar", heuristic="blind"))
    assert r.failure_reason == "PlannerResourceLimit"


def test_replan_budget(tower_cfg):
    slip = Perturbation("grasp_slip", Trigger(probability=1.0))
    r = run_episode(dataclasses.replace(tower_cfg, perturbations=(slip,), max_replans=3))
    assert not r.success and r.failure_reason == "ReplanBudgetExhausted"
    assert r.plans_computed == 3 == len(r.failures)
    assert sum(r.trials_of_failed_steps.values()) == 3


def test_max_replans_must_be_positive(tower_cfg):
    with pytest.raises(ValueError):
        dataclasses.replace(tower_cfg, max_replans=0)


def test_episode_is_deterministic(scenarios_dir):
    cfg = load_scenario(scenarios_dir / "tower_knock.json").episode_config()
    e1, e2 = [], []
    r1, r2 = run_episode(cfg, e1), run_episode(cfg, e2)
    assert r1.to_json() == r2.to_json()
    assert json.dumps(e1) == json.dumps(e2)


def test_episode_leaves_config_untouched(tower_cfg):
    before = tower_cfg.scene.to_dict()
    run_episode(tower_cfg)
    assert tower_cfg.scene.to_dict() == before


def test_unrecoverable_noise_certain(tower_cfg):
    cfg = dataclasses.replace(tower_cfg, unrecoverable=UnrecoverableNoise(1.0, "blue"))
    r = run_episode(cfg)
    assert r.failure_reason == "ObjectLost"


# -- batches ------------------------------------------------------------------------

def test_batch_ordering_and_summary(tower_cfg):
    reports, summary = run_batch(tower_cfg, 3, seeds=[5, 1, 9])
    assert [r.seed for r in reports] == [5, 1, 9]
    assert summary == summarize(reports)
    assert summary["episodes"] == 3 and summary["successes"] == 3
    assert summary["trials_histogram"] == {"1": 3}


def test_batch_jobs_agree(tower_cfg):
    a, _ = run_batch(tower_cfg, 2, jobs=1)
    b, _ = run_batch(tower_cfg, 2, jobs=2)
    assert [r.to_json() for r in a] == [r.to_json() for r in b]


def test_batch_rejects_bad_seeds(tower_cfg):
    with pytest.raises(ValueError):
        run_batch(tower_cfg, 2, seeds=[1, 1])
    with pytest.raises(ValueError):
        run_batch(tower_cfg, 0)


# -- scenario files -------------------------------------------------------------------

BASE = {"version": 1, "objects": [{"name": "a", "position": [0, 0]}, {"name": "b", "on": "a"}],
        "goal": ["(on a b)"]}


def test_scenario_round_trip(tmp_path):
    from magpie_sim.scenario import write_scenario
    s = scenario_from_dict(BASE)
    write_scenario(s, tmp_path / "s.json")
    back = load_scenario(tmp_path / "s.json")
    assert back.goal == s.goal and back.raw == s.raw


@pytest.mark.parametrize("patch,field", [
    ({"version": 2}, "version"),
    ({"colour": 1}, "colour"),
    ({"goal": ["(on a c)"]}, "goal[0]"),
    ({"goal": ["(on a)"]}, "goal[0]"),
    ({"goal": ["on a b"]}, "goal[0]"),
    ({"objects": [{"name": "a", "size": [1, -2, 3]}]}, "objects[0].size"),
    ({"objects": [{"name": "a", "on": "z"}], "goal": []}, "objects[0].on"),
    ({"perturbations": [{"kind": "melt", "object": "a"}]}, "perturbations[0].kind"),
    ({"perturbations": [{"kind": "displace", "object": "a", "trigger": {"at_time": 1, "after_action": 1}}]},
     "perturbations[0].trigger"),
    ({"noise": {"p_miss": 2}}, "noise"),
    ({"noise": {"unrecoverable": {"p": 3}}}, "noise.unrecoverable.p"),
    ({"planner": {"strategy": "dfs"}}, "planner.strategy"),
    ({"planner": {"max_replans": 0}}, "planner.max_replans"),
    ({"world": {"gravity": 1}}, "world.gravity"),
    ({"batch": {"episodes": 0}}, "batch.episodes"),
])
def test_scenario_errors_name_the_field(patch, field):
    with pytest.raises(ConfigError) as ei:
        scenario_from_dict({**BASE, **patch}, "x.json")
    assert ei.value.field == field
    assert str(ei.value).startswith(f"x.json: {field}: ")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "bad.json")


def test_shipped_scenarios_load(scenarios_dir):
    for p in sorted(scenarios_dir.glob("*.json")):
        load_scenario(p).episode_config()
