"""Grounding and forward state-space search for typed-STRIPS tasks.

States are Python ints used as bitsets over the fact universe: bit ``i`` is
set iff fact ``i`` holds. This keeps successor generation and duplicate
detection cheap at desk scale while staying a canonical set representation.
"""
from __future__ import annotations

import enum
import heapq
import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

from .pddl import Atom, Domain, Literal, Problem

DEFAULT_OPERATOR_CAP = 10**6
DEFAULT_EXPANSION_CAP = 10**6


class CombinatorialLimit(RuntimeError):
    pass


class ResourceLimit(RuntimeError):
    pass


class Strategy(str, enum.Enum):
    ASTAR = "astar"
    GBFS = "gbfs"


class Heuristic(str, enum.Enum):
    HADD = "hadd"
    BLIND = "blind"


def _mask(ids: Iterable[int]) -> int:
    m = 0
    for i in ids:
        m |= 1 << i
    return m


def _bits(mask: int) -> list[int]:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


@dataclass(frozen=True)
class GroundOperator:
    name: str
    args: tuple[str, ...]
    pre: frozenset[int]
    add: frozenset[int]
    delete: frozenset[int]
    pre_neg: frozenset[int] = frozenset()
    cost: int = 1

    @cached_property
    def pre_mask(self) -> int:
        return _mask(self.pre)

    @cached_property
    def pre_neg_mask(self) -> int:
        return _mask(self.pre_neg)

    @cached_property
    def add_mask(self) -> int:
        return _mask(self.add)

    @cached_property
    def del_mask(self) -> int:
        return _mask(self.delete)

    def applicable(self, state: int) -> bool:
        return state & self.pre_mask == self.pre_mask and not state & self.pre_neg_mask

    def apply(self, state: int) -> int:
        return (state & ~self.del_mask) | self.add_mask

    def __str__(self) -> str:
        return "(" + " ".join((self.name,) + self.args) + ")"


@dataclass(frozen=True)
class GroundTask:
    facts: tuple[Atom, ...]
    init: frozenset[int]
    goal: frozenset[int]
    operators: tuple[GroundOperator, ...]
    goal_neg: frozenset[int] = frozenset()

    @cached_property
    def index(self) -> dict[Atom, int]:
        return {a: i for i, a in enumerate(self.facts)}

    @cached_property
    def init_mask(self) -> int:
        return _mask(self.init)

    @cached_property
    def goal_mask(self) -> int:
        return _mask(self.goal)

    @cached_property
    def goal_neg_mask(self) -> int:
        return _mask(self.goal_neg)

    @cached_property
    def _ops_by_pre(self) -> list[list[int]]:
        by = [[] for _ in self.facts]
        for k, op in enumerate(self.operators):
            for f in op.pre:
                by[f].append(k)
        return by

    def is_goal(self, state: int) -> bool:
        return state & self.goal_mask == self.goal_mask and not state & self.goal_neg_mask

    def mask_of(self, atoms: Iterable[Atom]) -> int:
        return _mask(self.index[a] for a in atoms)

    def atoms_of(self, state: int | Iterable[int]) -> frozenset[Atom]:
        ids = _bits(state) if isinstance(state, int) else state
        return frozenset(self.facts[i] for i in ids)

    def with_init_goal(self, init: Iterable[Atom], goal: Iterable[Atom]) -> "GroundTask":
        """Same operators, different initial state and (positive) goal."""
        return GroundTask(self.facts, frozenset(self.index[a] for a in init),
                          frozenset(self.index[a] for a in goal), self.operators)


@dataclass(frozen=True)
class Plan:
    steps: tuple[GroundOperator, ...] = ()
    cost: int = 0

    def __len__(self) -> int:
        return len(self.steps)

    def dump(self) -> str:
        lines = [f"; cost = {self.cost}"] + [str(s) for s in self.steps]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ValidationResult:
    valid: bool
    step: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.valid


# ---------------------------------------------------------------------------
# Grounding


def _objects_by_type(domain: Domain, problem: Problem) -> dict[str, list[str]]:
    by: dict[str, list[str]] = {}
    for t in domain.type_names:
        by[t] = sorted(o for o, ot in problem.objects if domain.is_subtype(ot, t))
    return by


def ground(domain: Domain, problem: Problem, max_operators: int = DEFAULT_OPERATOR_CAP) -> GroundTask:
    """Instantiate every action schema over type-consistent, pairwise-distinct objects.

    The fact universe holds every type-consistent instantiation of every
    predicate (repeated arguments included), so goals such as ``(on a a)``
    are representable even though nothing achieves them.
    """
    by_type = _objects_by_type(domain, problem)

    facts: list[Atom] = []
    for pred in domain.predicates:
        for combo in itertools.product(*(by_type[t] for _, t in pred.parameters)):
            facts.append(Atom(pred.name, combo))
    index = {a: i for i, a in enumerate(facts)}

    def ids(lits: Sequence[Literal], binding: dict[str, str], positive: bool) -> frozenset[int]:
        return frozenset(index[Atom(l.atom.predicate, tuple(binding[v] for v in l.atom.args))]
                         for l in lits if l.positive == positive)

    operators: list[GroundOperator] = []
    for action in domain.actions:
        names = [v for v, _ in action.parameters]
        for combo in itertools.product(*(by_type[t] for _, t in action.parameters)):
            if len(set(combo)) != len(combo):
                continue
            binding = dict(zip(names, combo))
            add = ids(action.effect, binding, True)
            delete = ids(action.effect, binding, False) - add
            operators.append(GroundOperator(
                action.name, combo,
                pre=ids(action.precondition, binding, True),
                add=add, delete=delete,
                pre_neg=ids(action.precondition, binding, False)))
            if len(operators) > max_operators:
                raise CombinatorialLimit(
                    f"more than {max_operators} ground operators; instance too large")

    init = frozenset(index[a] for a in problem.init)
    goal = frozenset(index[l.atom] for l in problem.goal if l.positive)
    goal_neg = frozenset(index[l.atom] for l in problem.goal if not l.positive)
    return GroundTask(tuple(facts), init, goal, tuple(operators), goal_neg)


# ---------------------------------------------------------------------------
# Heuristics


def h_relax(state: int | Iterable[int], task: GroundTask) -> float:
    """Additive delete-relaxation estimate (h_add) of the goal cost from ``state``.

    Computed with a generalized Dijkstra over facts: an operator fires once
    all of its positive preconditions have been settled, at the sum of their
    costs plus its own. Negative preconditions are ignored by the relaxation.
    """
    mask = state if isinstance(state, int) else _mask(state)
    n = len(task.facts)
    cost = [math.inf] * n
    heap: list[tuple[float, int]] = []
    for f in _bits(mask):
        cost[f] = 0.0
        heap.append((0.0, f))

    ops = task.operators
    remaining = [len(op.pre) for op in ops]
    acc = [0.0] * len(ops)
    for k, op in enumerate(ops):
        if not op.pre:
            for a in op.add:
                if op.cost < cost[a]:
                    cost[a] = float(op.cost)
                    heap.append((cost[a], a))
    heapq.heapify(heap)

    goals = set(task.goal)
    pending = len(goals)
    done = [False] * n
    by_pre = task._ops_by_pre
    while heap and pending:
        c, f = heapq.heappop(heap)
        if done[f] or c > cost[f]:
            continue
        done[f] = True
        if f in goals:
            pending -= 1
        for k in by_pre[f]:
            remaining[k] -= 1
            acc[k] += c
            if remaining[k] == 0:
                op = ops[k]
                val = acc[k] + op.cost
                for a in op.add:
                    if val < cost[a]:
                        cost[a] = val
                        heapq.heappush(heap, (val, a))
    return float(sum(cost[g] for g in task.goal))


def _blind(state: int, task: GroundTask) -> float:
    return 0.0


# ---------------------------------------------------------------------------
# Search


def search(task: GroundTask, strategy: Strategy | str = Strategy.GBFS,
           heuristic: Heuristic | str = Heuristic.HADD,
           max_expansions: int = DEFAULT_EXPANSION_CAP) -> Plan | None:
    """Best-first search from ``task.init``; ``None`` means the task is unsolvable.

    Open-list order is ``(f, h, insertion sequence)`` with f = g + h for A*
    and f = h for greedy best-first. A* with the blind heuristic is uniform
    cost search and returns cost-optimal plans.

    Raises
    ------
    ResourceLimit
        If more than ``max_expansions`` states are expanded.
    """
    strategy = Strategy(strategy)
    heuristic = Heuristic(heuristic)
    hfun = h_relax if heuristic is Heuristic.HADD else _blind
    greedy = strategy is Strategy.GBFS

    start = task.init_mask
    h0 = hfun(start, task)
    if math.isinf(h0):
        return None
    seq = itertools.count()
    open_list = [(h0, h0, next(seq), 0, start)]
    best_g = {start: 0}
    parent: dict[int, tuple[int, int]] = {}
    h_cache = {start: h0}
    ops = task.operators
    expansions = 0

    while open_list:
        _, _, _, g, state = heapq.heappop(open_list)
        if g > best_g[state]:
            continue
        if task.is_goal(state):
            return _extract(task, parent, state, g)
        expansions += 1
        if expansions > max_expansions:
            raise ResourceLimit(f"search exceeded {max_expansions} expansions")
        for k, op in enumerate(ops):
            if not op.applicable(state):
                continue
            succ = op.apply(state)
            g2 = g + op.cost
            if g2 >= best_g.get(succ, math.inf):
                continue
            best_g[succ] = g2
            parent[succ] = (state, k)
            h = h_cache.get(succ)
            if h is None:
                h = h_cache[succ] = hfun(succ, task)
            if math.isinf(h):
                continue
            f = h if greedy else g2 + h
            heapq.heappush(open_list, (f, h, next(seq), g2, succ))
    return None


def _extract(task: GroundTask, parent: dict[int, tuple[int, int]], state: int, g: int) -> Plan:
    steps = []
    while state in parent:
        state, k = parent[state]
        steps.append(task.operators[k])
    steps.reverse()
    return Plan(tuple(steps), g)


# ---------------------------------------------------------------------------
# Validation


def _fmt(atom: Atom) -> str:
    return f"{atom.predicate}({','.join(atom.args)})"


def validate(task: GroundTask, plan: Plan | Sequence[GroundOperator]) -> ValidationResult:
    """Replay ``plan`` under STRIPS semantics, independently of the search code."""
    steps = plan.steps if isinstance(plan, Plan) else tuple(plan)
    state = set(task.init)
    for i, op in enumerate(steps):
        for f in sorted(op.pre):
            if f not in state:
                return ValidationResult(False, i, f"precondition {_fmt(task.facts[f])} unsatisfied")
        for f in sorted(op.pre_neg):
            if f in state:
                return ValidationResult(False, i, f"precondition not {_fmt(task.facts[f])} unsatisfied")
        state = (state - op.delete) | op.add
    for f in sorted(task.goal):
        if f not in state:
            return ValidationResult(False, len(steps), f"goal {_fmt(task.facts[f])} unsatisfied")
    for f in sorted(task.goal_neg):
        if f in state:
            return ValidationResult(False, len(steps), f"goal not {_fmt(task.facts[f])} unsatisfied")
    return ValidationResult(True)


def trajectory(task: GroundTask, plan: Plan) -> list[frozenset[Atom]]:
    """States visited by executing ``plan`` from init (init included)."""
    state = set(task.init)
    out = [task.atoms_of(state)]
    for op in plan.steps:
        state = (state - op.delete) | op.add
        out.append(task.atoms_of(state))
    return out
