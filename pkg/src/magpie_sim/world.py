"""Ground-truth tabletop: cuboids, a top-down gripper, primitives and perturbations.

Physics is quasi-static. Objects stay upright (yaw only), move rigidly with
the hand while held and drop straight down onto the first support when
released. Gripper motion is checked for collisions by sweeping the finger,
palm and held-object boxes at 1 mm steps.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import gripper as gr
from .geometry import Box, aabbs_overlap, boxes_overlap, footprints_overlap, heading, look_at, top_down
from .pddl import Atom
from .perception import CameraModel, GraspPose, LabeledCluster, RelationConfig, spatial_relations


class UnknownObject(KeyError):
    pass


class UnknownOperator(ValueError):
    pass


# ---------------------------------------------------------------------------
# State


@dataclass
class ObjectInstance:
    name: str
    size: tuple[float, float, float]
    position: tuple[float, float, float]   # box center, mm
    yaw: float = 0.0
    mass: float = 0.02                     # kg
    color: str = ""

    def box(self) -> Box:
        return Box.upright(self.position, self.size, self.yaw)

    @property
    def bottom(self) -> float:
        return self.position[2] - self.size[2] / 2

    @property
    def top(self) -> float:
        return self.position[2] + self.size[2] / 2


@dataclass
class HandState:
    """End-effector pose (tool point between the fingertips) plus finger state."""

    position: tuple[float, float, float] = (0.0, 0.0, 250.0)
    rotation: np.ndarray = field(default_factory=top_down)
    fingers: gr.GripperState = field(default_factory=gr.GripperState)
    held: str | None = None
    held_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)  # hand frame
    held_yaw: float = 0.0                                       # relative to hand heading

    @property
    def aperture(self) -> float:
        return self.fingers.aperture


@dataclass(frozen=True)
class WorldConfig:
    workspace_lo: tuple[float, float, float] = (-300.0, -300.0, 0.0)
    workspace_hi: tuple[float, float, float] = (300.0, 300.0, 400.0)
    finger_length: float = 60.0
    finger_width: float = 20.0
    finger_thickness: float = 8.0
    palm_size: tuple[float, float, float] = (140.0, 50.0, 30.0)
    safe_height: float = 200.0
    place_clearance: float = 2.0
    grasp_force: float = 10.0         # N commanded by symbolic grasps
    table_friction: float = 0.4       # object/table static friction for the hold force
    move_speed: float = 200.0         # mm/s, simulated clock only
    views: tuple[tuple[tuple[float, float, float], tuple[float, float, float]], ...] = (
        ((-170.0, -170.0, 330.0), (0.0, 0.0, 30.0)),
        ((170.0, 170.0, 330.0), (0.0, 0.0, 30.0)),
    )
    density: float = 0.2              # rendered points per mm^2
    relations: RelationConfig = RelationConfig()


@dataclass
class Scene:
    objects: dict[str, ObjectInstance]
    hand: HandState = field(default_factory=HandState)
    table_height: float = 0.0
    rng_seed: int = 0
    config: WorldConfig = field(default_factory=WorldConfig)
    model: gr.Gripper = field(default_factory=gr.default_gripper)
    clock: float = 0.0
    pending_grasp: tuple[str, gr.GraspOutcome] | None = None
    knocks: int = 0

    # the hand state under its public name
    @property
    def gripper(self) -> HandState:
        return self.hand

    def copy(self) -> "Scene":
        return copy.deepcopy(self)

    def obj(self, name: str) -> ObjectInstance:
        try:
            return self.objects[name]
        except KeyError:
            raise UnknownObject(name) from None

    def visible_boxes(self) -> dict[str, Box]:
        return {n: o.box() for n, o in sorted(self.objects.items()) if n != self.hand.held}

    def camera(self, **kw) -> CameraModel:
        """Palm camera at the current hand pose, looking along the approach axis."""
        return _camera_at(self.hand.position, self.hand.rotation, self.config, **kw)

    # -- JSON snapshots ----------------------------------------------------

    def to_dict(self) -> dict:
        h = self.hand
        return {
            "objects": [{"name": o.name, "size": list(o.size), "position": list(o.position),
                         "yaw": o.yaw, "mass": o.mass, "color": o.color}
                        for o in sorted(self.objects.values(), key=lambda o: o.name)],
            "gripper": {"position": list(h.position), "rotation": np.asarray(h.rotation).tolist(),
                        "left": h.fingers.left, "right": h.fingers.right,
                        "force_left": h.fingers.force_left, "force_right": h.fingers.force_right,
                        "held": h.held, "held_offset": list(h.held_offset), "held_yaw": h.held_yaw},
            "table_height": self.table_height,
            "rng_seed": self.rng_seed,
            "clock": self.clock,
        }

    @classmethod
    def from_dict(cls, d: dict, **kw) -> "Scene":
        objs = {o["name"]: ObjectInstance(o["name"], tuple(o["size"]), tuple(o["position"]),
                                          o.get("yaw", 0.0), o.get("mass", 0.02), o.get("color", ""))
                for o in d["objects"]}
        g = d.get("gripper", {})
        hand = HandState(
            tuple(g.get("position", (0.0, 0.0, 250.0))),
            np.array(g["rotation"], float) if "rotation" in g else top_down(),
            gr.GripperState(g.get("left", 53.12), g.get("right", 53.12),
                            g.get("force_left", 0.0), g.get("force_right", 0.0)),
            g.get("held"), tuple(g.get("held_offset", (0.0, 0.0, 0.0))), g.get("held_yaw", 0.0))
        return cls(objs, hand, d.get("table_height", 0.0), d.get("rng_seed", 0),
                   clock=d.get("clock", 0.0), **kw)


def _camera_at(tcp, rotation, cfg: WorldConfig, **kw) -> CameraModel:
    r = np.asarray(rotation, float)
    eye = np.asarray(tcp, float) - r[:, 2] * cfg.finger_length
    return CameraModel.at_pose(eye, r, **kw)


def observation_poses(cfg: WorldConfig) -> list[tuple[tuple[float, float, float], np.ndarray]]:
    """Hand poses that put the palm camera at each configured view."""
    out = []
    for eye, target in cfg.views:
        r = look_at(eye, target)
        tcp = np.asarray(eye, float) + r[:, 2] * cfg.finger_length
        out.append((tuple(float(v) for v in tcp), r))
    return out


def build_scene(objects: Iterable[dict], *, table_height: float = 0.0, seed: int = 0,
                config: WorldConfig | None = None, model: gr.Gripper | None = None) -> Scene:
    """Scene from object specs with ``position`` = (x, y) and an optional ``on`` support.

    Objects are stacked in dependency order, each resting on its support's top
    (or the table).
    """
    specs = {o["name"]: o for o in objects}
    placed: dict[str, ObjectInstance] = {}

    def place(name, trail=()):
        if name in placed:
            return placed[name]
        if name in trail:
            raise ValueError(f"support cycle through {name!r}")
        if name not in specs:
            raise UnknownObject(name)
        o = specs[name]
        size = tuple(float(v) for v in o.get("size", (30.0, 30.0, 30.0)))
        yaw = float(o.get("yaw", 0.0))
        on = o.get("on")
        if on:
            base = place(on, trail + (name,))
            xy = o.get("position", base.position[:2])
            z = base.top + size[2] / 2
        else:
            xy = o.get("position", (0.0, 0.0))
            z = table_height + size[2] / 2
        inst = ObjectInstance(name, size, (float(xy[0]), float(xy[1]), float(z)), yaw,
                              float(o.get("mass", 0.02)), o.get("color", ""))
        placed[name] = inst
        return inst

    for name in specs:
        place(name)
    kw = {}
    if config is not None:
        kw["config"] = config
    if model is not None:
        kw["model"] = model
    return Scene({n: placed[n] for n in sorted(placed)}, table_height=table_height, rng_seed=seed, **kw)


# ---------------------------------------------------------------------------
# Hand geometry and collisions


def hand_boxes(hand: HandState, cfg: WorldConfig, position=None, rotation=None) -> list[Box]:
    """Left finger, right finger and palm as oriented boxes."""
    p = np.asarray(hand.position if position is None else position, float)
    r = np.asarray(hand.rotation if rotation is None else rotation, float)
    x, z = r[:, 0], r[:, 2]
    fl = cfg.finger_length
    t = cfg.finger_thickness
    half_f = np.array([t / 2, cfg.finger_width / 2, fl / 2])
    left = Box(p - x * (hand.fingers.left + t / 2) - z * fl / 2, half_f, r)
    right = Box(p + x * (hand.fingers.right + t / 2) - z * fl / 2, half_f, r)
    palm = Box(p - z * (fl + cfg.palm_size[2] / 2), np.asarray(cfg.palm_size, float) / 2, r)
    return [left, right, palm]


def _held_box(scene: Scene, position=None, rotation=None) -> Box | None:
    h = scene.hand
    if h.held is None:
        return None
    o = scene.objects[h.held]
    c, yaw = _held_pose(h, position, rotation)
    return Box.upright(c, o.size, yaw)


def _held_pose(h: HandState, position=None, rotation=None):
    p = np.asarray(h.position if position is None else position, float)
    r = np.asarray(h.rotation if rotation is None else rotation, float)
    c = p + r @ np.asarray(h.held_offset, float)
    return c, heading(r) + h.held_yaw


def _sweep_hits(moving: Box, step: np.ndarray, n: int, other: Box, tol: float = 0.1) -> int | None:
    """First sample k in 0..n at which ``moving`` translated by k*step overlaps ``other``.

    Rotation is constant over the sweep, so the SAT projections are linear
    in k and all samples are tested at once.
    """
    ra_axes = moving.rotation.T
    rb_axes = other.rotation.T
    axes = [*ra_axes, *rb_axes]
    for u in ra_axes:
        for v in rb_axes:
            c = np.cross(u, v)
            nrm = np.linalg.norm(c)
            if nrm > 1e-9:
                axes.append(c / nrm)
    ax = np.array(axes)
    radii = np.abs(ax @ ra_axes.T) @ moving.half + np.abs(ax @ rb_axes.T) @ other.half
    t0 = ax @ (other.center - moving.center)
    dt = ax @ step
    k = np.arange(n + 1)
    sep = np.abs(t0[:, None] - dt[:, None] * k[None, :]) >= radii[:, None] - tol
    overlap = ~sep.any(axis=0)
    hits = np.flatnonzero(overlap)
    return int(hits[0]) if hits.size else None


# ---------------------------------------------------------------------------
# Settling


def _stack_above(scene: Scene, base: str) -> list[str]:
    """``base`` and every object resting (transitively) on it, bottom first."""
    out = [base]
    frontier = [base]
    while frontier:
        b = scene.objects[frontier.pop()]
        bb = b.box()
        for n, o in sorted(scene.objects.items()):
            if n in out or n == scene.hand.held:
                continue
            if abs(o.bottom - b.top) <= 0.5 and footprints_overlap(o.box(), bb):
                out.append(n)
                frontier.append(n)
    return out


def support_of(scene: Scene, name: str) -> str | None:
    """Object ``name`` rests on (None for the table or when held)."""
    o = scene.obj(name)
    if scene.hand.held == name:
        return None
    ob = o.box()
    best = None
    for n, other in sorted(scene.objects.items()):
        if n == name or n == scene.hand.held:
            continue
        if abs(o.bottom - other.top) <= 0.5 and footprints_overlap(ob, other.box()):
            if best is None or other.top > scene.objects[best].top:
                best = n
    return best


def _settle(scene: Scene, names: Iterable[str] | None = None) -> None:
    """Drop objects straight down onto the highest support beneath them.

    Objects are processed bottom-up; an object rests on the table or on the
    highest already-settled object whose footprint overlaps its own and
    whose top lies below its center.
    """
    held = scene.hand.held
    todo = set(scene.objects) - {held} if names is None else set(names) - {held}
    order = sorted((n for n in scene.objects if n != held),
                   key=lambda n: (scene.objects[n].bottom, n))
    settled: list[str] = []
    for n in order:
        o = scene.objects[n]
        if n in todo:
            ob = o.box()
            rest = scene.table_height
            for s in settled:
                so = scene.objects[s]
                if so.top <= o.position[2] + 1e-9 and footprints_overlap(ob, so.box()):
                    rest = max(rest, so.top)
            z = rest + o.size[2] / 2
            if abs(z - o.position[2]) > 1e-9:
                o.position = (o.position[0], o.position[1], z)
        settled.append(n)


def _scatter(scene: Scene, names: list[str], around, rng: np.random.Generator) -> None:
    """Put ``names`` on the table near ``around`` without overlapping anything."""
    lo, hi = scene.config.workspace_lo, scene.config.workspace_hi
    moving = set(names)
    for n in names:
        o = scene.objects[n]
        for attempt in range(400):
            r = rng.uniform(45.0, 90.0) + attempt * 0.25
            a = rng.uniform(0.0, 2 * math.pi)
            yaw = rng.uniform(-math.pi / 4, math.pi / 4)
            x = float(np.clip(around[0] + r * math.cos(a), lo[0] + o.size[0], hi[0] - o.size[0]))
            y = float(np.clip(around[1] + r * math.sin(a), lo[1] + o.size[1], hi[1] - o.size[1]))
            cand = Box.upright((x, y, 0.0), np.add(o.size, 4.0), yaw)
            clash = any(footprints_overlap(cand, other.box())
                        for m, other in scene.objects.items()
                        if m != n and m != scene.hand.held and (m not in moving or names.index(m) < names.index(n)))
            if not clash:
                break
        o.position = (x, y, scene.table_height + o.size[2] / 2)
        o.yaw = yaw
    _settle(scene)


def _knock(scene: Scene, struck: str, seed: int | None = None) -> list[str]:
    stack = _stack_above(scene, struck)
    base = scene.objects[struck].position
    if seed is None:
        seed = scene.rng_seed * 1000 + scene.knocks
    scene.knocks += 1
    _scatter(scene, stack, base[:2], np.random.default_rng(seed))
    return stack


# ---------------------------------------------------------------------------
# Primitives


@dataclass(frozen=True)
class MoveTo:
    position: tuple[float, float, float]
    rotation: np.ndarray | None = None


@dataclass(frozen=True)
class OpenGripper:
    aperture: float | None = None


@dataclass(frozen=True)
class CloseGripper:
    force_limit: float


@dataclass(frozen=True)
class Attach:
    pass


@dataclass(frozen=True)
class Detach:
    pass


@dataclass
class PrimitiveResult:
    ok: bool
    error: str | None = None
    detail: str = ""
    outcome: gr.GraspOutcome | None = None
    moved: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.ok


OK = PrimitiveResult(True)


def execute_primitive(scene: Scene, cmd) -> PrimitiveResult:
    """Apply one primitive to ``scene`` in place."""
    if isinstance(cmd, MoveTo):
        return _move(scene, cmd)
    if isinstance(cmd, OpenGripper):
        return _open(scene, cmd)
    if isinstance(cmd, CloseGripper):
        return _close(scene, cmd)
    if isinstance(cmd, Attach):
        return _attach(scene)
    if isinstance(cmd, Detach):
        return _detach(scene)
    raise TypeError(f"unknown primitive {cmd!r}")


def _in_workspace(cfg: WorldConfig, p) -> bool:
    return all(lo - 1e-9 <= v <= hi + 1e-9 for v, lo, hi in zip(p, cfg.workspace_lo, cfg.workspace_hi))


def _move(scene: Scene, cmd: MoveTo) -> PrimitiveResult:
    cfg = scene.config
    h = scene.hand
    target = np.asarray(cmd.position, float)
    if not _in_workspace(cfg, target):
        return PrimitiveResult(False, "OutOfWorkspace", f"target {tuple(np.round(target, 2))} outside workspace")
    rot = np.asarray(h.rotation if cmd.rotation is None else cmd.rotation, float)
    start = np.asarray(h.position, float)
    dist = float(np.linalg.norm(target - start))
    n = max(1, math.ceil(dist / 1.0))
    step = (target - start) / n

    parts = hand_boxes(h, cfg, start, rot)
    hb = _held_box(scene, start, rot)
    if hb is not None:
        parts.append(hb)
    hit_k, hit_obj = None, None
    sweep_lo = np.minimum(start, target)
    sweep_hi = np.maximum(start, target)
    for name, o in sorted(scene.objects.items()):
        if name == h.held:
            continue
        ob = o.box()
        olo, ohi = ob.aabb()
        for part in parts:
            plo, phi = part.aabb()
            if not aabbs_overlap(plo + sweep_lo - start, phi + sweep_hi - start, olo, ohi, 0.1):
                continue
            k = _sweep_hits(part, step, n, ob)
            if k is not None and (hit_k is None or k < hit_k):
                hit_k, hit_obj = k, name
    stop = target if hit_k is None else start + step * max(hit_k - 1, 0)
    scene.clock += float(np.linalg.norm(stop - start)) / cfg.move_speed
    _set_hand_pose(scene, stop, rot)
    if hit_k is None:
        return OK
    moved = _knock(scene, hit_obj)
    return PrimitiveResult(False, "Collision", f"hand struck {hit_obj}", moved=tuple(moved))


def _set_hand_pose(scene: Scene, position, rotation) -> None:
    h = scene.hand
    h.position = tuple(float(v) for v in position)
    h.rotation = np.asarray(rotation, float)
    if h.held is not None:
        c, yaw = _held_pose(h)
        o = scene.objects[h.held]
        o.position = tuple(float(v) for v in c)
        o.yaw = yaw


def _open(scene: Scene, cmd: OpenGripper) -> PrimitiveResult:
    h = scene.hand
    lk = scene.model.linkage
    half_max = lk.max_aperture / 2
    half = half_max if cmd.aperture is None else min(max(cmd.aperture / 2, 0.0), half_max)
    if h.held is not None:
        _release(scene)
    h.fingers = gr.GripperState(half, half, 0.0, 0.0)
    scene.pending_grasp = None
    scene.clock += 0.5
    return OK


def object_between_fingers(scene: Scene) -> tuple[str, float, float] | None:
    """(name, width along the grip axis, center offset) of the object the fingers would close on."""
    h = scene.hand
    cfg = scene.config
    p = np.asarray(h.position, float)
    r = np.asarray(h.rotation, float)
    x, y, z = r[:, 0], r[:, 1], r[:, 2]
    best = None
    for name, o in sorted(scene.objects.items()):
        if name == h.held:
            continue
        b = o.box()
        d = b.center - p
        off = float(d @ x)
        w = b.extent_along(x)
        # must overlap the finger pads across, along and up the fingers
        if off + w / 2 <= -h.fingers.left or off - w / 2 >= h.fingers.right:
            continue
        if abs(d @ y) >= (b.extent_along(y) + cfg.finger_width) / 2:
            continue
        along = -(d @ z)  # distance from fingertips toward the palm
        if along + b.extent_along(z) / 2 <= 0 or along - b.extent_along(z) / 2 >= cfg.finger_length:
            continue
        key = abs(off)
        if best is None or key < best[0]:
            best = (key, name, w, off)
    return None if best is None else best[1:]


def _close(scene: Scene, cmd: CloseGripper) -> PrimitiveResult:
    h = scene.hand
    if h.held is not None:
        return PrimitiveResult(False, "AlreadyHolding", h.held)
    found = object_between_fingers(scene)
    if found is None:
        h.fingers = gr.GripperState(0.0, 0.0, 0.0, 0.0)
        scene.clock += 0.5
        return PrimitiveResult(False, "NothingToGrasp", "fingers closed on nothing")
    name, width, offset = found
    o = scene.objects[name]
    g = scene.model
    hold = scene.config.table_friction * o.mass * g.grasp.gravity
    try:
        out = g.close_on_object(h.fingers, width, offset, cmd.force_limit, hold_force=hold)
    except gr.ObjectTooWide as exc:
        return PrimitiveResult(False, "ObjectTooWide", str(exc))
    except gr.ForceLimitExceedsModel as exc:
        return PrimitiveResult(False, "ForceLimitExceedsModel", str(exc))
    if out.object_shift:
        x = np.asarray(h.rotation, float)[:, 0]
        x_h = np.array([x[0], x[1], 0.0])
        o.position = tuple(float(v) for v in np.asarray(o.position) + x_h * out.object_shift)
    h.fingers = out.state
    scene.pending_grasp = (name, out)
    scene.clock += out.trace[-1][0] if out.trace else 0.0
    return PrimitiveResult(True, outcome=out)


def _attach(scene: Scene) -> PrimitiveResult:
    h = scene.hand
    if scene.pending_grasp is None:
        return PrimitiveResult(False, "NothingToGrasp", "no object between closed fingers")
    name, out = scene.pending_grasp
    o = scene.objects[name]
    need = gr.min_grip_force(scene.model.grasp, o.mass)
    f = min(out.force_left, out.force_right)
    if f + 1e-9 < need:
        return PrimitiveResult(False, "GraspTooWeak",
                               f"per-finger force {f:.2f} N below required {need:.2f} N", outcome=out)
    r = np.asarray(h.rotation, float)
    h.held = name
    h.held_offset = tuple(float(v) for v in r.T @ (np.asarray(o.position) - np.asarray(h.position)))
    h.held_yaw = o.yaw - heading(r)
    scene.pending_grasp = None
    scene.clock += 0.1
    return OK


def _release(scene: Scene) -> str:
    h = scene.hand
    name = h.held
    h.held = None
    h.held_offset = (0.0, 0.0, 0.0)
    h.held_yaw = 0.0
    _settle(scene, [name])
    return name


def _detach(scene: Scene) -> PrimitiveResult:
    if scene.hand.held is None:
        return PrimitiveResult(False, "NotHolding", "")
    name = _release(scene)
    f = scene.hand.fingers
    scene.hand.fingers = gr.GripperState(f.left, f.right, 0.0, 0.0)
    scene.clock += 0.1
    return PrimitiveResult(True, moved=(name,))


# ---------------------------------------------------------------------------
# Symbolic actions


@dataclass
class Bindings:
    """What the robot believes about object poses, from its last perception."""

    grasps: dict[str, GraspPose] = field(default_factory=dict)
    footprints: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)  # xy AABBs

    @classmethod
    def from_clusters(cls, clusters: Iterable[LabeledCluster], gripper_max: float) -> "Bindings":
        from .perception import DegenerateCloud, NoFeasibleGrasp, grasp_from_bbox
        b = cls()
        for c in clusters:
            lo, hi = c.aabb()
            b.footprints[c.label] = (lo[:2], hi[:2])
            try:
                b.grasps[c.label] = grasp_from_bbox(c, gripper_max)
            except (DegenerateCloud, NoFeasibleGrasp):
                pass
        return b


SUPPORTED_OPERATORS = ("pick-up", "unstack", "put-down", "stack")


def apply_symbolic(scene: Scene, action, bindings: Bindings,
                   on_primitive: Callable[[Scene], None] | None = None) -> PrimitiveResult:
    """Run the primitive sequence behind a blocksworld operator.

    Poses come from ``bindings`` (the robot's belief), not from the scene,
    so a scene changed behind the robot's back makes the motion miss. On
    success the belief about the moved object is updated from proprioception.
    ``on_primitive`` runs after every primitive, e.g. for timed perturbations.
    """
    name, args = action.name, tuple(action.args)
    if name not in SUPPORTED_OPERATORS:
        raise UnknownOperator(name)

    def run(cmd) -> PrimitiveResult:
        res = execute_primitive(scene, cmd)
        if on_primitive is not None:
            on_primitive(scene)
        return res

    if name in ("pick-up", "unstack"):
        return _pick(scene, args[0], args[1] if name == "unstack" else None, bindings, run)
    return _place(scene, args[0], args[1] if name == "stack" else None, bindings, run)


def _safe_z(scene: Scene) -> float:
    return min(scene.config.safe_height, scene.config.workspace_hi[2])


def _transit(scene: Scene, xy, rot, run) -> PrimitiveResult:
    """Rise to the safe height, then travel over ``xy`` at that height."""
    h = scene.hand
    z = _safe_z(scene)
    cur = np.asarray(h.position, float)
    if cur[2] < z - 1e-9:
        res = run(MoveTo((float(cur[0]), float(cur[1]), z)))
        if not res:
            return res
    return run(MoveTo((float(xy[0]), float(xy[1]), z), rot))


def _column_top(scene: Scene, xy) -> str | None:
    """Highest object whose footprint contains the point ``xy``."""
    best = None
    for n, o in sorted(scene.objects.items()):
        if n == scene.hand.held:
            continue
        local = np.asarray(o.box().rotation).T[:2, :2] @ (np.asarray(xy, float) - np.asarray(o.position[:2]))
        if np.all(np.abs(local) <= np.asarray(o.size[:2]) / 2 + 1e-9):
            if best is None or o.top > scene.objects[best].top:
                best = n
    return best


def _pick(scene: Scene, obj: str, support: str | None, bindings: Bindings, run) -> PrimitiveResult:
    if scene.hand.held is not None:
        return PrimitiveResult(False, "AlreadyHolding", scene.hand.held)
    g = bindings.grasps.get(obj)
    if g is None:
        return PrimitiveResult(False, "NoGraspPose", obj)
    rot = top_down(g.yaw)
    res = run(OpenGripper())
    if res:
        res = _transit(scene, g.position[:2], rot, run)
    if not res:
        return res
    # approach check: the top of the column under the hand must be the object,
    # resting on the named support
    top = _column_top(scene, g.position[:2])
    if top != obj or (support is not None and support_of(scene, obj) != support):
        return PrimitiveResult(False, "NothingToGrasp",
                               f"expected {obj} at the grasp pose, found {top or 'nothing'}")
    res = run(MoveTo(tuple(float(v) for v in g.position), rot))
    if res:
        res = run(CloseGripper(scene.config.grasp_force))
    if res:
        res = run(Attach())
    if not res:
        return res
    res = run(MoveTo((float(g.position[0]), float(g.position[1]), _safe_z(scene)), rot))
    return res


def _free_spot(scene: Scene, bindings: Bindings, size_xy: float, held: str) -> tuple[float, float] | None:
    margin = 12.0
    half = size_xy / 2 + margin
    cur = np.asarray(scene.hand.position[:2], float)
    cands = [(x, y) for x in np.arange(-100.0, 100.1, 10.0) for y in np.arange(-100.0, 100.1, 10.0)]
    cands.sort(key=lambda p: (round(float(np.hypot(p[0] - cur[0], p[1] - cur[1])), 6), p))
    for x, y in cands:
        lo = np.array([x - half, y - half])
        hi = np.array([x + half, y + half])
        clash = any(aabbs_overlap(lo, hi, flo, fhi) for n, (flo, fhi) in bindings.footprints.items() if n != held)
        if not clash:
            return float(x), float(y)
    return None


def _place(scene: Scene, obj: str, target: str | None, bindings: Bindings, run) -> PrimitiveResult:
    h = scene.hand
    if h.held != obj:
        return PrimitiveResult(False, "NotHolding", f"not holding {obj}")
    o = scene.objects[obj]
    cfg = scene.config
    if target is None:
        spot = _free_spot(scene, bindings, float(np.hypot(*o.size[:2])), obj)
        if spot is None:
            return PrimitiveResult(False, "NoFreeSpot", "")
        goal_xy = np.asarray(spot)
        goal_bottom = scene.table_height
        hand_yaw = heading(h.rotation)
    else:
        g = bindings.grasps.get(target)
        if g is None:
            return PrimitiveResult(False, "NoGraspPose", target)
        goal_xy = g.position[:2]
        goal_bottom = float(g.position[2] + g.height / 2)
        # square the held object up with the target (faces parallel, mod 90 degrees)
        want = g.yaw - h.held_yaw
        cur = heading(h.rotation)
        hand_yaw = cur + ((want - cur + math.pi / 4) % (math.pi / 2) - math.pi / 4)
    rot = top_down(hand_yaw)
    off = rot @ np.asarray(h.held_offset, float)
    tcp_xy = goal_xy - off[:2]
    res = _transit(scene, tcp_xy, rot, run)
    if not res:
        return res
    tcp_z = goal_bottom + cfg.place_clearance + o.size[2] / 2 - off[2]
    res = run(MoveTo((float(tcp_xy[0]), float(tcp_xy[1]), float(tcp_z)), rot))
    if not res:
        return res
    res = run(Detach())
    if res:
        res = run(OpenGripper())
    if res:
        res = run(MoveTo((float(tcp_xy[0]), float(tcp_xy[1]), _safe_z(scene)), rot))
    if res:
        # proprioceptive belief update: the object is where the hand let go of it
        ext = (o.size[0], o.size[1], o.size[2])
        c = np.array([goal_xy[0], goal_xy[1], goal_bottom + o.size[2] / 2])
        old = bindings.grasps.get(obj)
        grip_rot = old.orientation if old is not None else top_down(0.0)
        width = old.grip_width if old is not None else ext[0]
        bindings.grasps[obj] = GraspPose(c, grip_rot, width,
                                         old.extents if old is not None else ext)
        r = max(ext[0], ext[1]) / 2 * math.sqrt(2)
        bindings.footprints[obj] = (c[:2] - r, c[:2] + r)
    return res


# ---------------------------------------------------------------------------
# Perturbations


@dataclass(frozen=True)
class Trigger:
    after_action: int | None = None     # fires once the n-th action (1-based) completes
    at_time: float | None = None        # simulated seconds
    probability: float | None = None    # chance per completed action

    def __post_init__(self):
        set_ = [v is not None for v in (self.after_action, self.at_time, self.probability)]
        if sum(set_) != 1:
            raise ValueError("a trigger needs exactly one of after_action, at_time, probability")
        if self.probability is not None and not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")


PERTURBATION_KINDS = ("displace", "knock_tower", "grasp_slip", "remove_from_view")


@dataclass(frozen=True)
class Perturbation:
    kind: str
    trigger: Trigger = Trigger(after_action=1)
    object: str | None = None
    delta: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)  # dx, dy, dz, dyaw
    scatter_seed: int = 0

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.kind != "grasp_slip" and self.object is None:
            raise ValueError(f"{self.kind} needs an object")

    @property
    def once(self) -> bool:
        return self.kind != "grasp_slip"


def _park(scene: Scene, name: str) -> None:
    """Somewhere well past the table edge, beyond every view's range."""
    o = scene.objects[name]
    parked = sorted(n for n, other in scene.objects.items() if other.position[0] >= 600.0 and n != name)
    x = 700.0 + 60.0 * len(parked)
    o.position = (x, 0.0, scene.table_height + o.size[2] / 2)
    o.yaw = 0.0
    _settle(scene)


def inject(scene: Scene, p: Perturbation) -> Scene:
    """Apply ``p`` to ``scene`` in place (and return it)."""
    if p.object is not None and p.object not in scene.objects:
        raise UnknownObject(p.object)
    if p.kind == "displace":
        if any(p.delta):
            o = scene.objects[p.object]
            if scene.hand.held == p.object:
                _release(scene)
            o.position = (o.position[0] + p.delta[0], o.position[1] + p.delta[1], o.position[2] + p.delta[2])
            o.yaw += p.delta[3]
            _settle(scene)
    elif p.kind == "knock_tower":
        if scene.hand.held == p.object:
            _release(scene)
        _knock(scene, p.object, seed=p.scatter_seed)
    elif p.kind == "remove_from_view":
        if scene.hand.held == p.object:
            _release(scene)
        _park(scene, p.object)
    elif p.kind == "grasp_slip":
        if scene.hand.held is not None:
            _release(scene)
            f = scene.hand.fingers
            scene.hand.fingers = gr.GripperState(f.left, f.right, 0.0, 0.0)
    return scene


class PerturbationSchedule:
    """Fires perturbations when their triggers come due."""

    def __init__(self, perturbations: Iterable[Perturbation], rng: np.random.Generator | None = None,
                 log: Callable[[dict], None] | None = None):
        self.items = list(perturbations)
        self.fired = [False] * len(self.items)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.log = log
        self.actions = 0

    def _fire(self, scene: Scene, i: int) -> None:
        p = self.items[i]
        inject(scene, p)
        self.fired[i] = True
        if self.log is not None:
            self.log({"event": "perturb", "kind": p.kind, "object": p.object})

    def on_primitive(self, scene: Scene) -> None:
        for i, p in enumerate(self.items):
            t = p.trigger.at_time
            if t is not None and not self.fired[i] and scene.clock >= t:
                self._fire(scene, i)

    def on_action(self, scene: Scene) -> None:
        self.actions += 1
        for i, p in enumerate(self.items):
            if p.once and self.fired[i]:
                continue
            tr = p.trigger
            if tr.after_action is not None and tr.after_action == self.actions:
                self._fire(scene, i)
            elif tr.probability is not None:
                # one draw per action whatever happens, to keep streams aligned
                if self.rng.random() < tr.probability:
                    if p.kind == "grasp_slip" and scene.hand.held is None:
                        continue
                    self._fire(scene, i)


# ---------------------------------------------------------------------------
# Facts


def box_cluster(name: str, box: Box) -> LabeledCluster:
    return LabeledCluster(name, box.corners())


def ground_truth_facts(scene: Scene) -> set[Atom]:
    """Same relation rules as perception, evaluated on true poses, plus hand atoms."""
    clusters = [box_cluster(n, b) for n, b in scene.visible_boxes().items()]
    facts = spatial_relations(clusters, scene.table_height, scene.config.relations)
    if scene.hand.held is None:
        facts.add(Atom("handempty", ()))
    else:
        facts.add(Atom("holding", (scene.hand.held,)))
    return facts
