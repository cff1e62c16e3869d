import pytest

from magpie_sim.pddl import (Atom, DomainMismatch, Literal, PddlSyntaxError, SemanticError,
                             UnsupportedFeature, parse_domain, parse_problem, print_domain,
                             print_problem)
from conftest import FIXTURES

DOMAINS = ["blocksworld-domain", "blocksworld-caps-domain", "empty-domain", "gripper-domain",
           "untyped-domain"]
PROBLEMS = {"blocksworld-2": "blocksworld-domain", "blocksworld-3": "blocksworld-domain",
            "blocksworld-satisfied": "blocksworld-domain", "empty-problem": "empty-domain",
            "gripper-problem": "gripper-domain"}
REJECTS = {
    "reject-constants": "constants", "reject-derived": "derived",
    "reject-durative-action": "durative-action", "reject-either": "either",
    "reject-equality": "=", "reject-exists": "exists", "reject-fluents": "numeric-fluents",
    "reject-forall": "forall", "reject-functions": "functions", "reject-increase": "increase",
    "reject-or": "or", "reject-when": "when",
}

BW = """(define (domain bw) (:requirements :strips :typing) (:types block)
 (:predicates (on ?x - block ?y - block) (clear ?x - block))
 (:action a :parameters (?x - block ?y - block) :precondition (clear ?x) :effect (on ?x ?y)))"""


def read(name):
    return (FIXTURES / f"{name}.pddl").read_text()


def test_blocksworld_shape(domain):
    assert domain.name == "blocksworld"
    assert [a.name for a in domain.actions] == ["pick-up", "put-down", "stack", "unstack"]
    assert {p.name: p.arity for p in domain.predicates} == {
        "on": 2, "ontable": 1, "clear": 1, "holding": 1, "handempty": 0}
    stack = domain.action("stack")
    assert Literal(Atom("on", ("?x", "?y"))) in stack.effect
    assert Literal(Atom("holding", ("?x",)), False) in stack.effect


def test_keywords_are_case_insensitive():
    assert parse_domain(read("blocksworld-caps-domain")) == parse_domain(read("blocksworld-domain"))


def test_problem_contents():
    d = parse_domain(read("blocksworld-domain"))
    p = parse_problem(read("blocksworld-3"), d)
    assert p.object_names == ("redBlock", "blueBlock", "greenBlock")
    assert Atom("on", ("greenBlock", "blueBlock")) in p.init
    assert p.goal == (Literal(Atom("on", ("redBlock", "blueBlock"))),)


def test_corpus_is_large_enough():
    assert len(DOMAINS) + len(PROBLEMS) + len(REJECTS) + 1 >= 10


@pytest.mark.parametrize("name", DOMAINS)
def test_domain_round_trip(name):
    d1 = parse_domain(read(name))
    text = print_domain(d1)
    d2 = parse_domain(text)
    assert d2 == d1
    assert print_domain(d2) == text


@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_problem_round_trip(name):
    d = parse_domain(read(PROBLEMS[name]))
    p1 = parse_problem(read(name), d)
    text = print_problem(p1)
    p2 = parse_problem(text, d)
    assert p2 == p1
    assert print_problem(p2) == text


@pytest.mark.parametrize("name,feature", sorted(REJECTS.items()))
def test_rejects_unsupported(name, feature):
    with pytest.raises(UnsupportedFeature) as ei:
        parse_domain(read(name))
    assert ei.value.feature == feature
    assert feature in str(ei.value)
    assert ei.value.line is not None and ei.value.column is not None


def test_rejects_metric_in_problem(domain):
    with pytest.raises(UnsupportedFeature) as ei:
        parse_problem(read("reject-metric-problem"), domain)
    assert ei.value.feature == "metric"
    assert (ei.value.line, ei.value.column) == (6, 4)


def test_plain_at_atom_is_not_temporal():
    d = parse_domain(read("gripper-domain"))
    assert "at" in {p.name for p in d.predicates}


@pytest.mark.parametrize("text,where", [
    ("(define (domain x)", (1, 1)),
    ("(define (domain x)))", (1, 20)),
    ("(define (domain x) (:predicates (p ?x)) (:action a :parameters (?x) :effect (q ?x)))", (1, 78)),  # the undeclared head token
])
def test_errors_carry_positions(text, where):
    with pytest.raises((PddlSyntaxError, SemanticError)) as ei:
        parse_domain(text)
    assert (ei.value.line, ei.value.column) == where


def test_position_on_later_line():
    text = "(define (domain x)\n  (:predicates (p ?x))\n  (:action a :parameters (?x)\n   :precondition (r ?x) :effect (p ?x)))"
    with pytest.raises(SemanticError) as ei:
        parse_domain(text)
    assert ei.value.line == 4
    assert "r" in ei.value.reason


@pytest.mark.parametrize("body,msg", [
    ("(:objects a - block) (:init (on a b)) (:goal (on a a))", "undeclared object"),
    ("(:objects a - block) (:init (on a)) (:goal (on a a))", "arity"),
    ("(:objects a - crate) (:init) (:goal (clear a))", "undeclared type"),
    ("(:objects a a - block) (:init) (:goal (clear a))", "duplicate object"),
    ("(:objects a - block) (:init (not (clear a))) (:goal (clear a))", "positive"),
    ("(:objects a - block) (:init (pink a)) (:goal (clear a))", "undeclared predicate"),
])
def test_problem_semantic_errors(body, msg):
    d = parse_domain(BW)
    with pytest.raises(SemanticError) as ei:
        parse_problem(f"(define (problem p) (:domain bw) {body})", d)
    assert msg in str(ei.value)


def test_domain_mismatch():
    with pytest.raises(DomainMismatch):
        parse_problem("(define (problem p) (:domain other) (:init) (:goal (and)))", parse_domain(BW))


def test_effect_on_undeclared_parameter_is_rejected():
    bad = BW.replace(":effect (on ?x ?y)", ":effect (on ?x ?z)")
    with pytest.raises(SemanticError):
        parse_domain(bad)


def test_unknown_requirement_rejected():
    with pytest.raises(UnsupportedFeature):
        parse_domain("(define (domain x) (:requirements :adl))")
