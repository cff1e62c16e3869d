"""Behavior trees compiled from plans, ticked against a world interface.

Every plan step becomes::

    Fallback(
        Condition(add effects already hold),            # skip finished steps
        Sequence(Condition(preconditions), Action(step), Condition(add effects)),
    )

and the steps hang off a root Sequence. Control nodes have memory: once any
node has returned Success or Failure it keeps that result, so re-ticking a
finished subtree never touches the world again.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Protocol, Sequence as Seq, Union

from .pddl import Atom
from .planner import GroundOperator, GroundTask, Plan


class WorldUnavailable(RuntimeError):
    """The world could not answer a query or report on an action."""


class Status(enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    RUNNING = "running"


class FailureKind(str, enum.Enum):
    PRECONDITION_FAILED = "precondition_failed"
    EXECUTION_FAILED = "execution_failed"
    EFFECT_NOT_OBSERVED = "effect_not_observed"


@dataclass(frozen=True)
class TickStatus:
    status: Status
    kind: FailureKind | None = None
    step: int | None = None

    @property
    def ok(self) -> bool:
        return self.status is Status.SUCCESS

    @property
    def running(self) -> bool:
        return self.status is Status.RUNNING

    @property
    def failed(self) -> bool:
        return self.status is Status.FAILURE

    def __str__(self) -> str:
        if self.kind is not None:
            return f"{self.kind.value}:{self.step}"
        return self.status.value


SUCCESS = TickStatus(Status.SUCCESS)
RUNNING = TickStatus(Status.RUNNING)
FAILURE = TickStatus(Status.FAILURE)


# Nodes compare by identity: the executor keys its memory on them.
@dataclass(frozen=True, eq=False)
class SequenceNode:
    children: tuple["BTNode", ...]


@dataclass(frozen=True, eq=False)
class FallbackNode:
    children: tuple["BTNode", ...]


@dataclass(frozen=True, eq=False)
class ConditionNode:
    atoms: tuple[Atom, ...]
    role: str = "guard"  # guard | skip | precondition | effect
    step: int | None = None


@dataclass(frozen=True, eq=False)
class ActionNode:
    operator: GroundOperator
    expected_effects: tuple[Atom, ...]
    step: int


BTNode = Union[SequenceNode, FallbackNode, ConditionNode, ActionNode]


@dataclass(frozen=True)
class BehaviorTree:
    root: BTNode

    def nodes(self) -> Iterator[BTNode]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if isinstance(node, (SequenceNode, FallbackNode)):
                stack.extend(reversed(node.children))

    def actions(self) -> list[ActionNode]:
        return [n for n in self.nodes() if isinstance(n, ActionNode)]


class WorldInterface(Protocol):
    def holds(self, atoms: Seq[Atom]) -> bool:
        """True iff every atom holds; raise WorldUnavailable if unanswerable."""

    def start(self, operator: GroundOperator) -> None:
        """Begin executing the primitive behind ``operator``."""

    def poll(self, operator: GroundOperator) -> Status:
        """RUNNING while the primitive is in progress, then SUCCESS/FAILURE."""


def compile_plan(plan: Plan, task: GroundTask) -> BehaviorTree:
    if not plan.steps:
        return BehaviorTree(SequenceNode((ConditionNode((), "guard"),)))
    facts = task.facts
    steps = []
    for i, op in enumerate(plan.steps):
        adds = tuple(sorted(facts[f] for f in op.add))
        pres = tuple(sorted(facts[f] for f in op.pre))
        steps.append(FallbackNode((
            ConditionNode(adds, "skip", i),
            SequenceNode((
                ConditionNode(pres, "precondition", i),
                ActionNode(op, adds, i),
                ConditionNode(adds, "effect", i),
            )),
        )))
    return BehaviorTree(SequenceNode(tuple(steps)))


class Executor:
    """Ticks one tree against one world; holds all per-run memory."""

    def __init__(self, tree: BehaviorTree, world: WorldInterface):
        self.tree = tree
        self.world = world
        self.ticks = 0
        self._done: dict[int, TickStatus] = {}
        self._started: set[int] = set()

    def reset(self) -> None:
        self._done.clear()
        self._started.clear()

    def tick(self) -> TickStatus:
        self.ticks += 1
        return self._tick(self.tree.root)

    def run(self, max_ticks: int = 100_000) -> TickStatus:
        status = RUNNING
        for _ in range(max_ticks):
            status = self.tick()
            if not status.running:
                return status
        return status

    def _tick(self, node: BTNode) -> TickStatus:
        key = id(node)
        if key in self._done:
            return self._done[key]
        if isinstance(node, SequenceNode):
            status = SUCCESS
            for child in node.children:
                status = self._tick(child)
                if not status.ok:
                    break
        elif isinstance(node, FallbackNode):
            status = FAILURE
            for child in node.children:
                status = self._tick(child)
                if not status.failed:
                    break
        elif isinstance(node, ConditionNode):
            if self.world.holds(node.atoms):
                status = SUCCESS
            elif node.role == "precondition":
                status = TickStatus(Status.FAILURE, FailureKind.PRECONDITION_FAILED, node.step)
            elif node.role == "effect":
                status = TickStatus(Status.FAILURE, FailureKind.EFFECT_NOT_OBSERVED, node.step)
            else:
                status = FAILURE
        elif isinstance(node, ActionNode):
            if key not in self._started:
                self._started.add(key)
                self.world.start(node.operator)
                return RUNNING
            result = self.world.poll(node.operator)
            if result is Status.RUNNING:
                return RUNNING
            status = SUCCESS if result is Status.SUCCESS else TickStatus(
                Status.FAILURE, FailureKind.EXECUTION_FAILED, node.step)
        else:
            raise TypeError(f"not a behavior tree node: {node!r}")
        if not status.running:
            self._done[key] = status
        return status


def tick(tree: BehaviorTree, world: WorldInterface, executor: Executor | None = None) -> TickStatus:
    """Single tick; pass the same ``executor`` back in to keep memory across ticks."""
    if executor is None:
        executor = Executor(tree, world)
    return executor.tick()


def _label(node: BTNode) -> str:
    if isinstance(node, SequenceNode):
        return "Sequence"
    if isinstance(node, FallbackNode):
        return "Fallback"
    if isinstance(node, ConditionNode):
        body = " ".join(str(a) for a in node.atoms) or "true"
        return f"{node.role}? {body}"
    return f"{node.step}: {node.operator}"


def to_dot(tree: BehaviorTree) -> str:
    ids: dict[int, str] = {}
    lines = ["digraph BT {", "  node [fontname=Helvetica];"]
    for node in tree.nodes():
        nid = ids[id(node)] = f"n{len(ids)}"
        shape = {"SequenceNode": "box", "FallbackNode": "diamond",
                 "ConditionNode": "ellipse", "ActionNode": "box"}[type(node).__name__]
        style = ", style=filled" if isinstance(node, ActionNode) else ""
        label = _label(node).replace("\\", "\\\\").replace('"', '\\"')
        lines.append(f'  {nid} [label="{label}", shape={shape}{style}];')
    for node in tree.nodes():
        if isinstance(node, (SequenceNode, FallbackNode)):
            for child in node.children:
                lines.append(f"  {ids[id(node)]} -> {ids[id(child)]};")
    lines.append("}")
    return "\n".join(lines) + "\n"


@dataclass
class FactWorld:
    """Symbolic world over ground atoms; primitives apply STRIPS effects.

    ``fail_steps`` names 0-based action indices whose primitive fails, and
    ``after_action`` hooks run once the n-th action (1-based) completes.
    """

    task: GroundTask
    state: set[Atom] = field(default_factory=set)
    fail_steps: set[int] = field(default_factory=set)
    after_action: dict[int, object] = field(default_factory=dict)
    history: list[frozenset[Atom]] = field(default_factory=list)
    available: bool = True
    _pending: dict[int, Status] = field(default_factory=dict)
    _count: int = 0

    @classmethod
    def from_init(cls, task: GroundTask, **kw) -> "FactWorld":
        w = cls(task, set(task.atoms_of(task.init)), **kw)
        w.history.append(frozenset(w.state))
        return w

    def holds(self, atoms: Seq[Atom]) -> bool:
        if not self.available:
            raise WorldUnavailable("fact world offline")
        return all(a in self.state for a in atoms)

    def start(self, operator: GroundOperator) -> None:
        facts = self.task.facts
        index = self._count
        self._count += 1
        ok = index not in self.fail_steps and all(facts[f] in self.state for f in operator.pre)
        if ok:
            self.state -= {facts[f] for f in operator.delete}
            self.state |= {facts[f] for f in operator.add}
        self.history.append(frozenset(self.state))
        hook = self.after_action.get(self._count)
        if hook is not None:
            hook(self)
        self._pending[id(operator)] = Status.SUCCESS if ok else Status.FAILURE

    def poll(self, operator: GroundOperator) -> Status:
        if not self.available:
            raise WorldUnavailable("fact world offline")
        return self._pending.pop(id(operator), Status.FAILURE)
