"""The closed loop: perceive, build a problem, plan, compile, execute, replan.

Every random stream is spawned from the episode seed, and timestamps come
from the simulated clock, so an episode is a pure function of its config.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .btree import Executor, Status, compile_plan
from .pddl import Atom, Domain, Literal, Problem, parse_domain
from .perception import DetectionNoise, LabeledCluster, MAX_APERTURE, merge_clouds, render, segment
from .planner import GroundOperator, ResourceLimit, ground, search
from .world import (Bindings, MoveTo, Perturbation, PerturbationSchedule, Scene, Trigger,
                    apply_symbolic, execute_primitive, ground_truth_facts, observation_poses)

log = logging.getLogger(__name__)

FAILURE_REASONS = ("Unsolvable", "ObjectLost", "ReplanBudgetExhausted", "PlannerResourceLimit")


class GoalObjectMissing(LookupError):
    pass


@lru_cache(maxsize=1)
def blocksworld_domain() -> Domain:
    return parse_domain(resources.files("magpie_sim").joinpath("data/blocksworld.pddl").read_text())


# ---------------------------------------------------------------------------
# Configuration and reports


@dataclass(frozen=True)
class UnrecoverableNoise:
    """With probability ``p`` per episode, ``object`` leaves the view after action ``after_action``."""

    p: float = 0.0
    object: str | None = None
    after_action: int = 1


@dataclass
class EpisodeConfig:
    scene: Scene
    goal: tuple[Atom, ...]
    perturbations: tuple[Perturbation, ...] = ()
    noise: DetectionNoise = DetectionNoise()
    max_replans: int = 10
    strategy: str = "gbfs"
    heuristic: str = "hadd"
    max_expansions: int = 100_000
    seed: int = 0
    unrecoverable: UnrecoverableNoise = UnrecoverableNoise()
    domain: Domain | None = None

    def __post_init__(self):
        if self.max_replans < 1:
            raise ValueError("max_replans must be at least 1")


@dataclass
class EpisodeReport:
    success: bool
    plans_computed: int
    actions_executed: int
    trials_of_failed_steps: dict[str, int]
    failure_reason: str | None
    seed: int
    failures: list[str] = field(default_factory=list)
    sim_time: float = 0.0
    goal_in_ground_truth: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class Percepts:
    clusters: list[LabeledCluster]
    facts: frozenset[Atom]
    labels: tuple[str, ...]
    held: str | None


# ---------------------------------------------------------------------------
# Perception pass


def perceive(scene: Scene, noise: DetectionNoise, seed: int) -> Percepts:
    """Visit every observation pose, render, fuse, segment, extract relations."""
    cfg = scene.config
    h = scene.hand
    if h.position[2] < cfg.safe_height - 1e-9:
        execute_primitive(scene, MoveTo((h.position[0], h.position[1], cfg.safe_height)))
    ss = np.random.SeedSequence(seed).spawn(len(cfg.views) + 1)
    clouds = []
    for (tcp, rot), s in zip(observation_poses(cfg), ss):
        execute_primitive(scene, MoveTo(tcp, rot))
        scene.clock += 0.5  # exposure and processing
        clouds.append(render(scene, scene.camera(), cfg.density, int(s.generate_state(1)[0])))
    clusters = segment(merge_clouds(clouds), noise, int(ss[-1].generate_state(1)[0]))
    from .perception import spatial_relations
    facts = set(spatial_relations(clusters, scene.table_height, cfg.relations))
    held = scene.hand.held
    facts.add(Atom("holding", (held,)) if held else Atom("handempty", ()))
    labels = tuple(sorted({c.label for c in clusters}))
    return Percepts(clusters, frozenset(facts), labels, held)


# ---------------------------------------------------------------------------
# Problem construction


def build_problem(percepts: Percepts | Iterable[Atom], goal: Sequence[Atom], domain: Domain | None = None,
                  objects: Iterable[str] | None = None) -> Problem:
    """PDDL problem over the detected objects (plus whatever the hand holds)."""
    domain = domain or blocksworld_domain()
    if isinstance(percepts, Percepts):
        facts = set(percepts.facts)
        names = set(percepts.labels) | ({percepts.held} if percepts.held else set())
    else:
        facts = set(percepts)
        names = set()
    if objects is not None:
        names |= set(objects)
    else:
        names |= {a for atom in facts for a in atom.args}
    for atom in goal:
        missing = [a for a in atom.args if a not in names]
        if missing:
            raise GoalObjectMissing(f"goal {atom} names undetected object(s) {', '.join(missing)}")
    otype = "block" if "block" in domain.type_names else "object"
    preds = {p.name: p.arity for p in domain.predicates}
    init = frozenset(a for a in facts if preds.get(a.predicate) == len(a.args)
                     and all(x in names for x in a.args))
    return Problem("scene", domain.name, tuple((n, otype) for n in sorted(names)), init,
                   tuple(Literal(a) for a in goal))


# ---------------------------------------------------------------------------
# World adapter for the behavior tree


class PipelineWorld:
    """Answers condition nodes through perception and runs actions in the scene."""

    def __init__(self, scene: Scene, bindings: Bindings, schedule: PerturbationSchedule,
                 noise: DetectionNoise, seeds: np.random.Generator, percepts: Percepts, emit):
        self.scene = scene
        self.bindings = bindings
        self.schedule = schedule
        self.noise = noise
        self.seeds = seeds
        self.percepts = percepts
        self.emit = emit
        self.actions = 0
        self._stale = False
        self._results: dict[int, bool] = {}

    def fresh_percepts(self) -> Percepts:
        seed = int(self.seeds.integers(2**31))
        self.percepts = perceive(self.scene, self.noise, seed)
        self._stale = False
        self.emit("perceive", objects=list(self.percepts.labels),
                  facts=sorted(str(a) for a in self.percepts.facts))
        return self.percepts

    def holds(self, atoms: Sequence[Atom]) -> bool:
        if self._stale:
            self.fresh_percepts()
        return all(a in self.percepts.facts for a in atoms)

    def start(self, operator: GroundOperator) -> None:
        res = apply_symbolic(self.scene, operator, self.bindings, on_primitive=self.schedule.on_primitive)
        self.actions += 1
        self.emit("act", op=str(operator), ok=res.ok, error=res.error, detail=res.detail)
        self.schedule.on_action(self.scene)
        self._stale = True
        self._results[id(operator)] = res.ok

    def poll(self, operator: GroundOperator) -> Status:
        return Status.SUCCESS if self._results.pop(id(operator), False) else Status.FAILURE


# ---------------------------------------------------------------------------
# Episodes


def run_episode(cfg: EpisodeConfig, events: list[dict] | None = None) -> EpisodeReport:
    """Run one episode; ``events`` (if given) receives the event log entries."""
    domain = cfg.domain or blocksworld_domain()
    scene = cfg.scene.copy()
    scene.rng_seed = cfg.seed
    ss_percept, ss_pert, ss_unrec = np.random.SeedSequence(cfg.seed).spawn(3)
    percept_rng = np.random.default_rng(ss_percept)
    log_list = events if events is not None else []

    def emit(event: str, **data) -> None:
        entry = {"t": round(scene.clock, 6), "event": event, **data}
        log_list.append(entry)
        log.debug("%s", entry)

    items = list(cfg.perturbations)
    un = cfg.unrecoverable
    target = un.object or next((a.args[-1] for a in cfg.goal if a.args), None)
    if un.p > 0 and np.random.default_rng(ss_unrec).random() < un.p and target is not None:
        items.append(Perturbation("remove_from_view", Trigger(after_action=un.after_action), target))
        emit("schedule", kind="remove_from_view", object=target, after_action=un.after_action)
    schedule = PerturbationSchedule(items, np.random.default_rng(ss_pert),
                                    log=lambda d: emit(**d))

    goal = tuple(cfg.goal)
    plans = 0
    failures: list[str] = []
    reason = None
    success = False
    world = PipelineWorld(scene, Bindings(), schedule, cfg.noise, percept_rng, None, emit)
    percepts = world.fresh_percepts()
    total_actions = 0
    while True:
        if plans > 0 and all(a in percepts.facts for a in goal):
            success = True
            break
        if plans >= cfg.max_replans:
            reason = "ReplanBudgetExhausted"
            break
        try:
            problem = build_problem(percepts, goal, domain)
        except GoalObjectMissing as exc:
            emit("error", reason="ObjectLost", detail=str(exc))
            reason = "ObjectLost"
            break
        task = ground(domain, problem)
        try:
            plan = search(task, cfg.strategy, cfg.heuristic, cfg.max_expansions)
        except ResourceLimit as exc:
            emit("error", reason="PlannerResourceLimit", detail=str(exc))
            reason = "PlannerResourceLimit"
            break
        if plan is None:
            emit("error", reason="Unsolvable")
            reason = "Unsolvable"
            break
        plans += 1
        emit("plan", n=plans, cost=plan.cost, steps=[str(s) for s in plan.steps])
        world.bindings = Bindings.from_clusters(percepts.clusters, MAX_APERTURE)
        world.actions = 0
        status = Executor(compile_plan(plan, task), world).run()
        total_actions += world.actions
        emit("bt", status=str(status))
        percepts = world.fresh_percepts()
        if status.failed:
            failures.append(str(status))
        elif not all(a in percepts.facts for a in goal):
            failures.append("goal_not_reached")

    truth = ground_truth_facts(scene)
    in_truth = all(a in truth for a in goal)
    if success and not in_truth:
        log.warning("seed %d: perception reports the goal but ground truth disagrees", cfg.seed)
    emit("end", success=success, reason=reason, plans=plans)
    return EpisodeReport(success, plans, total_actions,
                         dict(sorted(Counter(failures).items())), reason, cfg.seed, failures,
                         round(scene.clock, 6), in_truth)


def _run_seed(args) -> tuple[EpisodeReport, list[dict]]:
    cfg, seed = args
    events: list[dict] = []
    report = run_episode(dataclasses.replace(cfg, seed=seed), events)
    return report, events


def summarize(reports: Sequence[EpisodeReport]) -> dict:
    ok = [r for r in reports if r.success]
    hist = Counter(r.plans_computed for r in ok)
    return {
        "episodes": len(reports),
        "successes": len(ok),
        "success_rate": len(ok) / len(reports) if reports else 0.0,
        "first_trial": hist.get(1, 0),
        "trials_histogram": {str(k): hist[k] for k in sorted(hist)},
        "failure_reasons": dict(sorted(Counter(r.failure_reason for r in reports if not r.success).items())),
    }


def run_batch(cfg: EpisodeConfig, episodes: int, seeds: Sequence[int] | None = None,
              jobs: int = 1, events: dict[int, list[dict]] | None = None) -> tuple[list[EpisodeReport], dict]:
    """Independent episodes over distinct seeds; results ordered by the seed list.

    ``events``, if given, is filled with each seed's event log.
    """
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    seeds = list(seeds) if seeds is not None else [cfg.seed + i for i in range(episodes)]
    if len(seeds) != episodes or len(set(seeds)) != episodes:
        raise ValueError("need one distinct seed per episode")
    work = [(cfg, s) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed, work))
    else:
        results = [_run_seed(w) for w in work]
    if events is not None:
        for s, (_, ev) in zip(seeds, results):
            events[s] = ev
    reports = [r for r, _ in results]
    return reports, summarize(reports)
