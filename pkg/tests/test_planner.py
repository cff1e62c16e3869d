import itertools
import math

import pytest
from hypothesis import given, settings, strategies as st

from magpie_sim.pddl import Atom, Literal, Problem, parse_domain, parse_problem
from magpie_sim.planner import (CombinatorialLimit, Plan, ResourceLimit, ground, h_relax, search,
                                trajectory, validate)
from bw_oracle import arrangements, bfs_cost, facts_of, goal_of, naive_hadd
from conftest import FIXTURES


def bw_problem(domain, blocks, init_stacks, goal_atoms):
    return Problem("t", "blocksworld", tuple((b, "block") for b in blocks),
                   facts_of(init_stacks), tuple(Literal(a) for a in sorted(goal_atoms)))


def test_grounding_counts(domain):
    p = parse_problem((FIXTURES / "blocksworld-3.pddl").read_text(), domain)
    task = ground(domain, p)
    assert len(task.operators) == 18
    assert len(task.facts) == 9 + 3 + 3 + 3 + 1
    # no operator binds one block to two parameters
    assert all(len(set(op.args)) == len(op.args) for op in task.operators)


def test_operator_cap(domain):
    blocks = [f"b{i}" for i in range(6)]
    p = bw_problem(domain, blocks, [(b,) for b in blocks], [])
    with pytest.raises(CombinatorialLimit):
        ground(domain, p, max_operators=20)


def test_hadd_matches_naive_fixpoint(domain):
    blocks = "abcd"
    states = list(arrangements(blocks))
    for i, init in enumerate(states[::7]):
        goal = goal_of(states[(i * 11) % len(states)])
        task = ground(domain, bw_problem(domain, blocks, init, goal))
        assert h_relax(task.init_mask, task) == naive_hadd(task, task.atoms_of(task.init))


def test_hadd_known_value(domain):
    # (on a b) from two tables blocks: pick-up a (1) + stack (holding 1 + clear b 0 + 1) = 2
    task = ground(domain, bw_problem(domain, "ab", [("a",), ("b",)], {Atom("on", ("a", "b"))}))
    assert h_relax(task.init, task) == 2.0


def test_hadd_unreachable_is_infinite(domain):
    task = ground(domain, bw_problem(domain, "ab", [("a",), ("b",)], {Atom("on", ("a", "a"))}))
    assert math.isinf(h_relax(task.init_mask, task))
    assert search(task, "astar", "hadd") is None


@pytest.mark.parametrize("strategy,heuristic", [("astar", "blind"), ("astar", "hadd"),
                                                ("gbfs", "hadd"), ("gbfs", "blind")])
def test_plans_validate_on_three_blocks(domain, strategy, heuristic):
    blocks = "abc"
    states = list(arrangements(blocks))
    for init, goal in itertools.product(states, states):
        task = ground(domain, bw_problem(domain, blocks, init, goal_of(goal)))
        plan = search(task, strategy, heuristic)
        assert plan is not None
        assert validate(task, plan).valid
        if strategy == "astar" and heuristic == "blind":
            assert plan.cost == bfs_cost(domain, blocks, facts_of(init), goal_of(goal))


def test_fixture_plan(domain):
    p = parse_problem((FIXTURES / "blocksworld-3.pddl").read_text(), domain)
    plan = search(ground(domain, p), "astar", "blind")
    assert [str(s) for s in plan.steps] == [
        "(unstack greenBlock blueBlock)", "(put-down greenBlock)",
        "(pick-up redBlock)", "(stack redBlock blueBlock)"]
    assert plan.dump().startswith("; cost = 4\n")


def test_satisfied_goal_gives_empty_plan(domain):
    p = parse_problem((FIXTURES / "blocksworld-satisfied.pddl").read_text(), domain)
    plan = search(ground(domain, p))
    assert plan == Plan((), 0)


def test_negative_goal_and_typed_domain():
    d = parse_domain((FIXTURES / "gripper-domain.pddl").read_text())
    p = parse_problem((FIXTURES / "gripper-problem.pddl").read_text(), d)
    task = ground(d, p)
    opt = search(task, "astar", "blind")
    assert validate(task, opt).valid
    assert opt.cost == 5  # pick, pick, move, drop, drop
    assert search(task, "astar", "hadd").cost >= 5


def test_resource_limit(domain):
    blocks = "abcd"
    task = ground(domain, bw_problem(domain, blocks, [tuple(blocks)], goal_of([tuple(reversed(blocks))])))
    with pytest.raises(ResourceLimit):
        search(task, "astar", "blind", max_expansions=5)


def test_validate_reports_step_and_reason(domain):
    task = ground(domain, bw_problem(domain, "ab", [("a",), ("b",)], {Atom("on", ("a", "b"))}))
    ops = {str(o): o for o in task.operators}
    r = validate(task, [ops["(stack a b)"]])
    assert not r.valid and r.step == 0 and "holding(a)" in r.reason
    r = validate(task, [ops["(pick-up a)"]])
    assert not r.valid and r.step == 1 and r.reason.startswith("goal")
    assert validate(task, [ops["(pick-up a)"], ops["(stack a b)"]]).valid


def test_trajectory(domain):
    task = ground(domain, bw_problem(domain, "ab", [("a",), ("b",)], {Atom("on", ("a", "b"))}))
    plan = search(task, "astar", "blind")
    traj = trajectory(task, plan)
    assert len(traj) == len(plan) + 1
    assert Atom("on", ("a", "b")) in traj[-1]
    assert Atom("holding", ("a",)) in traj[1]


def test_search_is_deterministic(domain):
    blocks = "abcd"
    task = ground(domain, bw_problem(domain, blocks, [tuple(blocks)], goal_of([tuple(reversed(blocks))])))
    a = search(task, "gbfs", "hadd")
    b = search(task, "gbfs", "hadd")
    assert a == b


STATES4 = list(arrangements("abcd"))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, len(STATES4) - 1), st.integers(0, len(STATES4) - 1))
def test_astar_hadd_plans_are_valid(domain, i, j):
    task = ground(domain, bw_problem(domain, "abcd", STATES4[i], goal_of(STATES4[j])))
    plan = search(task, "astar", "hadd")
    assert validate(task, plan).valid
