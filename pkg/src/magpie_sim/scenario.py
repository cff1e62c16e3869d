"""Scenario files (JSON, ``version: 1``) and their translation to episode configs.

A minimal file::

    {
      "version": 1,
      "seed": 7,
      "objects": [
        {"name": "green", "position": [0, 0]},
        {"name": "red", "on": "green"}
      ],
      "goal": ["(on green red)"]
    }

Optional sections: ``perturbations``, ``noise``, ``gripper`` (calibration
overrides), ``world``, ``planner``, ``batch`` and ``grasp`` (for force-trace
dumps). See the README for every field.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .executive import EpisodeConfig, UnrecoverableNoise, blocksworld_domain
from .gripper import gripper_from_config
from .pddl import Atom
from .perception import DetectionNoise, RelationConfig
from .planner import Heuristic, Strategy
from .world import PERTURBATION_KINDS, Perturbation, Trigger, WorldConfig, build_scene

SCHEMA_VERSION = 1
TOP_LEVEL = {"version", "name", "seed", "objects", "goal", "perturbations", "noise", "gripper",
             "world", "planner", "batch", "grasp", "table_height"}


class ConfigError(ValueError):
    def __init__(self, path: str | Path | None, field_: str, message: str):
        self.path = str(path) if path is not None else "<scenario>"
        self.field = field_
        super().__init__(f"{self.path}: {field_}: {message}")


def parse_atom(text: str) -> Atom:
    parts = text.strip().strip("()").split()
    if not parts or not text.strip().startswith("(") or not text.strip().endswith(")"):
        raise ValueError(f"expected an atom like '(on a b)', got {text!r}")
    return Atom(parts[0].lower(), tuple(parts[1:]))


@dataclass
class Scenario:
    raw: dict[str, Any]
    path: str | None = None
    goal: tuple[Atom, ...] = ()
    perturbations: tuple[Perturbation, ...] = ()
    noise: DetectionNoise = DetectionNoise()
    unrecoverable: UnrecoverableNoise = UnrecoverableNoise()
    world: WorldConfig = field(default_factory=WorldConfig)
    planner: dict[str, Any] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.raw.get("name") or (Path(self.path).stem if self.path else "scenario")

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def batch(self) -> int | None:
        b = self.raw.get("batch")
        return None if b is None else int(b.get("episodes", 1))

    @property
    def grasp(self) -> dict[str, float]:
        return dict(self.raw.get("grasp", {}))

    def scene(self, seed: int | None = None):
        return build_scene(self.raw["objects"], table_height=float(self.raw.get("table_height", 0.0)),
                           seed=self.seed if seed is None else seed, config=self.world,
                           model=gripper_from_config(self.raw.get("gripper")))

    def episode_config(self, seed: int | None = None) -> EpisodeConfig:
        seed = self.seed if seed is None else seed
        p = self.planner
        return EpisodeConfig(self.scene(seed), self.goal, self.perturbations, self.noise,
                             max_replans=int(p.get("max_replans", 10)),
                             strategy=p.get("strategy", "gbfs"), heuristic=p.get("heuristic", "hadd"),
                             max_expansions=int(p.get("max_expansions", 100_000)),
                             seed=seed, unrecoverable=self.unrecoverable)

    def to_dict(self) -> dict[str, Any]:
        return json.loads(json.dumps(self.raw))


def _require(cond: bool, path, field_: str, msg: str) -> None:
    if not cond:
        raise ConfigError(path, field_, msg)


def _number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def scenario_from_dict(d: Any, path: str | Path | None = None) -> Scenario:
    _require(isinstance(d, dict), path, "<root>", "scenario must be a JSON object")
    _require(d.get("version") == SCHEMA_VERSION, path, "version", f"must be {SCHEMA_VERSION}")
    unknown = sorted(set(d) - TOP_LEVEL)
    _require(not unknown, path, unknown[0] if unknown else "", "unknown field")
    _require(isinstance(d.get("seed", 0), int), path, "seed", "must be an integer")

    objs = d.get("objects")
    _require(isinstance(objs, list), path, "objects", "must be a list")
    names: list[str] = []
    for i, o in enumerate(objs):
        where = f"objects[{i}]"
        _require(isinstance(o, dict), path, where, "must be an object")
        _require(isinstance(o.get("name"), str) and o["name"], path, f"{where}.name", "must be a non-empty string")
        _require(o["name"] not in names, path, f"{where}.name", f"duplicate object {o['name']!r}")
        names.append(o["name"])
        if "size" in o:
            _require(isinstance(o["size"], list) and len(o["size"]) == 3
                     and all(_number(v) and v > 0 for v in o["size"]), path, f"{where}.size",
                     "must be three positive numbers (mm)")
        if "position" in o:
            _require(isinstance(o["position"], list) and len(o["position"]) == 2
                     and all(_number(v) for v in o["position"]), path, f"{where}.position",
                     "must be [x, y] in mm")
        if "mass" in o:
            _require(_number(o["mass"]) and o["mass"] >= 0, path, f"{where}.mass", "must be >= 0 kg")
        if "yaw" in o:
            _require(_number(o["yaw"]), path, f"{where}.yaw", "must be a number (rad)")
    for i, o in enumerate(objs):
        if o.get("on") is not None:
            _require(o["on"] in names, path, f"objects[{i}].on", f"unknown object {o['on']!r}")

    domain = blocksworld_domain()
    arity = {p.name: p.arity for p in domain.predicates}
    goals = d.get("goal")
    _require(isinstance(goals, list), path, "goal", "must be a list of atoms")
    goal = []
    for i, g in enumerate(goals):
        where = f"goal[{i}]"
        _require(isinstance(g, str), path, where, "must be a string like '(on a b)'")
        try:
            atom = parse_atom(g)
        except ValueError as exc:
            raise ConfigError(path, where, str(exc)) from None
        _require(arity.get(atom.predicate) == len(atom.args), path, where,
                 f"unknown predicate or wrong arity in {g!r}")
        for a in atom.args:
            _require(a in names, path, where, f"unknown object {a!r}")
        goal.append(atom)

    perts = []
    for i, p in enumerate(d.get("perturbations", [])):
        where = f"perturbations[{i}]"
        _require(isinstance(p, dict), path, where, "must be an object")
        kind = p.get("kind")
        _require(kind in PERTURBATION_KINDS, path, f"{where}.kind", f"must be one of {', '.join(PERTURBATION_KINDS)}")
        obj = p.get("object")
        if kind != "grasp_slip":
            _require(obj in names, path, f"{where}.object", f"unknown object {obj!r}")
        tr = p.get("trigger", {"after_action": 1})
        _require(isinstance(tr, dict), path, f"{where}.trigger", "must be an object")
        try:
            trigger = Trigger(**tr)
        except (TypeError, ValueError) as exc:
            raise ConfigError(path, f"{where}.trigger", str(exc)) from None
        delta = p.get("delta", [0, 0, 0, 0])
        _require(isinstance(delta, list) and len(delta) in (2, 3, 4) and all(_number(v) for v in delta),
                 path, f"{where}.delta", "must be [dx, dy(, dz(, dyaw))]")
        delta = tuple(float(v) for v in delta) + (0.0,) * (4 - len(delta))
        perts.append(Perturbation(kind, trigger, obj, delta, int(p.get("scatter_seed", 0))))

    nz = dict(d.get("noise", {}))
    un = nz.pop("unrecoverable", None)
    try:
        noise = DetectionNoise(**nz)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, "noise", str(exc)) from None
    unrec = UnrecoverableNoise()
    if un is not None:
        _require(isinstance(un, dict) and _number(un.get("p", 0)) and 0 <= un.get("p", 0) <= 1,
                 path, "noise.unrecoverable.p", "must lie in [0, 1]")
        if un.get("object") is not None:
            _require(un["object"] in names, path, "noise.unrecoverable.object", f"unknown object {un['object']!r}")
        unrec = UnrecoverableNoise(float(un.get("p", 0)), un.get("object"), int(un.get("after_action", 1)))

    world = WorldConfig()
    wd = dict(d.get("world", {}))
    fields_ = {f.name for f in dataclasses.fields(WorldConfig)}
    for k in wd:
        _require(k in fields_, path, f"world.{k}", "unknown field")
    if "relations" in wd:
        wd["relations"] = RelationConfig(**wd["relations"])
    for k in ("workspace_lo", "workspace_hi", "palm_size"):
        if k in wd:
            wd[k] = tuple(float(v) for v in wd[k])
    if "views" in wd:
        wd["views"] = tuple((tuple(map(float, e)), tuple(map(float, t))) for e, t in wd["views"])
    world = dataclasses.replace(world, **wd)

    planner = dict(d.get("planner", {}))
    if "strategy" in planner:
        _require(planner["strategy"] in [s.value for s in Strategy], path, "planner.strategy", "must be astar or gbfs")
    if "heuristic" in planner:
        _require(planner["heuristic"] in [h.value for h in Heuristic], path, "planner.heuristic", "must be hadd or blind")
    if "max_replans" in planner:
        _require(isinstance(planner["max_replans"], int) and planner["max_replans"] >= 1,
                 path, "planner.max_replans", "must be an integer >= 1")
    if "batch" in d:
        b = d["batch"]
        _require(isinstance(b, dict) and isinstance(b.get("episodes", 1), int) and b.get("episodes", 1) >= 1,
                 path, "batch.episodes", "must be an integer >= 1")
    if "gripper" in d:
        try:
            gripper_from_config(d["gripper"])
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(path, "gripper", str(exc)) from None

    return Scenario(d, str(path) if path is not None else None, tuple(goal), tuple(perts), noise, unrec,
                    world, planner)


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(p, "<file>", "no such file")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(p, f"<json line {exc.lineno}>", exc.msg) from None
    return scenario_from_dict(data, p)


def write_scenario(scn: Scenario | dict, path: str | Path) -> None:
    data = scn.to_dict() if isinstance(scn, Scenario) else scn
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
