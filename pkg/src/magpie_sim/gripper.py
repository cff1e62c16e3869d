"""Two-finger gripper models: servo force calibration, 4-bar finger linkage,
grip-force sizing and independent-finger closing on an object.

Lengths are in mm, angles in rad, forces in N, torques in N*m.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

G = 9.81


class OutOfRange(ValueError):
    pass


class SingularConfiguration(ArithmeticError):
    pass


class ObjectTooWide(ValueError):
    pass


class ForceLimitExceedsModel(ValueError):
    pass


# ---------------------------------------------------------------------------
# Servo setting -> fingertip force


@dataclass(frozen=True)
class ForceModel:
    """Piecewise force curve: clamped line up to the knee, then a quadratic.

    The quadratic is the unique one that matches the line's value and slope
    at the knee and reaches ``max_force`` at ``max_setting``.
    """

    slope: float = 0.0316
    intercept: float = -3.0194
    knee: float = 400.0
    max_setting: int = 1023
    max_force: float = 32.0
    resolution: float = 0.08

    def linear(self, x: float) -> float:
        return self.slope * x + self.intercept

    @property
    def knee_force(self) -> float:
        return self.linear(self.knee)

    @property
    def curvature(self) -> float:
        """Coefficient of (x - knee)**2 in the quadratic branch."""
        span = self.max_setting - self.knee
        return (self.max_force - self.knee_force - self.slope * span) / span**2

    @property
    def quad_coeffs(self) -> tuple[float, float, float]:
        """(q2, q1, q0) with F(x) = q2*x**2 + q1*x + q0 above the knee."""
        c, k = self.curvature, self.knee
        return c, self.slope - 2 * c * k, self.intercept + c * k * k

    def __call__(self, x: float) -> float:
        return setting_to_force(self, x)


def setting_to_force(m: ForceModel, x: float) -> float:
    if not 0 <= x <= m.max_setting:
        raise OutOfRange(f"setting {x} outside [0, {m.max_setting}]")
    if x <= m.knee:
        return max(0.0, m.linear(x))
    q2, q1, q0 = m.quad_coeffs
    return q2 * x * x + q1 * x + q0


def force_to_setting(m: ForceModel, f: float) -> int:
    """Smallest integer setting whose force reaches ``f``."""
    tol = 1e-9
    if f < 0 or f > m.max_force + tol:
        raise OutOfRange(f"force {f} outside [0, {m.max_force}]")
    if f <= 0:
        return 0
    if f <= m.knee_force:
        x = (f - m.intercept) / m.slope
    else:
        c = m.curvature
        x = m.knee + (-m.slope + math.sqrt(m.slope**2 + 4 * c * (f - m.knee_force))) / (2 * c)
    s = min(max(math.ceil(x - 1e-6), 0), m.max_setting)
    while s < m.max_setting and setting_to_force(m, s) < f - tol:
        s += 1
    while s > 0 and setting_to_force(m, s - 1) >= f - tol:
        s -= 1
    return s


def quantize_force(m: ForceModel, f: float) -> float:
    """Force the servo actually delivers for a command of ``f``."""
    if f <= m.knee_force:
        return round(f / m.resolution) * m.resolution
    return setting_to_force(m, force_to_setting(m, f))


# ---------------------------------------------------------------------------
# Finger linkage


@dataclass(frozen=True)
class LinkageModel:
    """Planar 4-bar per finger, in a frame with x pointing away from the
    gripper centerline and y pointing from the palm toward the fingertips.

    The crank (motor) pivots at ``crank_pivot`` and the rocker at
    ``rocker_pivot``; the finger is rigid with the coupler, and its contact
    face sits at ``pad`` = (outward, distal) offset from the crank pin along
    the coupler. Crank angles are measured from +y toward +x.
    """

    crank: float
    coupler: float
    rocker: float
    crank_pivot: tuple[float, float]
    rocker_pivot: tuple[float, float]
    pad: tuple[float, float]
    crank_range: tuple[float, float]
    max_aperture: float = 106.24
    stall_torque: float = 1.5

    @property
    def link_lengths(self) -> tuple[float, float, float, float]:
        ground = math.dist(self.crank_pivot, self.rocker_pivot)
        return self.crank, self.coupler, self.rocker, ground

    def joints(self, theta: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Crank pin, rocker pin and contact point for crank angle ``theta``."""
        o2 = np.asarray(self.crank_pivot, float)
        o4 = np.asarray(self.rocker_pivot, float)
        a = o2 + self.crank * np.array([math.sin(theta), math.cos(theta)])
        d = o4 - a
        dist = math.hypot(d[0], d[1])
        along = (dist * dist + self.coupler**2 - self.rocker**2) / (2 * dist)
        h2 = self.coupler**2 - along**2
        if h2 < 0:
            raise SingularConfiguration(f"linkage cannot close at theta={theta:.4f}")
        u = d / dist
        n = np.array([-u[1], u[0]])
        b1 = a + along * u + math.sqrt(h2) * n
        b2 = a + along * u - math.sqrt(h2) * n
        b = b1 if b1[0] > b2[0] else b2
        distal = (a - b) / self.coupler
        outward = np.array([distal[1], -distal[0]])
        p = a + self.pad[1] * distal + self.pad[0] * outward
        return a, b, p

    def tip(self, theta: float) -> float:
        """Contact-face distance from the centerline (mm)."""
        return float(self.joints(theta)[2][0])

    def check_angle(self, theta: float) -> None:
        lo, hi = self.crank_range
        if not lo - 1e-9 <= theta <= hi + 1e-9:
            raise OutOfRange(f"crank angle {theta} outside [{lo}, {hi}]")

    def angle_for_opening(self, opening: float) -> float:
        """Inverse kinematics: crank angle putting the contact face at ``opening`` mm."""
        lo, hi = self.crank_range
        if opening <= self.tip(lo):
            return lo
        if opening >= self.tip(hi):
            return hi
        return brentq(lambda t: self.tip(t) - opening, lo, hi, xtol=1e-13)


def aperture(l: LinkageModel, theta_left: float, theta_right: float) -> float:
    l.check_angle(theta_left)
    l.check_angle(theta_right)
    return l.tip(theta_left) + l.tip(theta_right)


def fingertip_force(l: LinkageModel, torque: float, theta: float, h: float = 1e-6) -> float:
    """Normal force at the contact face by virtual work: F = tau / (dx/dtheta)."""
    l.check_angle(theta)
    if torque < 0 or torque > l.stall_torque + 1e-12:
        raise OutOfRange(f"torque {torque} outside [0, {l.stall_torque}]")
    dxdt = (l.tip(theta + h) - l.tip(theta - h)) / (2 * h) / 1000.0
    if abs(dxdt) < 1e-9:
        raise SingularConfiguration(f"transmission singular at theta={theta:.6f}")
    return torque / abs(dxdt)


def calibrate_linkage(crank: float, coupler: float, rocker: float,
                      rocker_offset: tuple[float, float], pad: tuple[float, float],
                      closed_angle: float, max_aperture: float = 106.24,
                      stall_torque: float = 1.5, search_limit: float = 1.4) -> LinkageModel:
    """Place the pivots so the closed angle gives zero aperture, then find the
    crank angle at which the fingers reach ``max_aperture``."""
    base = LinkageModel(crank, coupler, rocker, (0.0, 0.0), rocker_offset, pad,
                        (closed_angle, search_limit), max_aperture, stall_torque)
    shift = -base.tip(closed_angle)
    moved = replace(base, crank_pivot=(shift, 0.0),
                    rocker_pivot=(rocker_offset[0] + shift, rocker_offset[1]))
    open_angle = brentq(lambda t: moved.tip(t) - max_aperture / 2, closed_angle, search_limit,
                        xtol=1e-14)
    return replace(moved, crank_range=(closed_angle, open_angle))


# ---------------------------------------------------------------------------
# Grip sizing


@dataclass(frozen=True)
class GraspSpec:
    friction: float = 0.4
    safety_factor: float = 1.5
    gravity: float = G

    def __post_init__(self):
        if self.friction <= 0:
            raise ValueError("friction coefficient must be positive")
        if self.safety_factor < 1:
            raise ValueError("safety factor must be >= 1")


def min_grip_force(spec: GraspSpec, mass: float) -> float:
    """Per-finger normal force for two friction contacts to carry ``mass`` kg."""
    if mass < 0:
        raise ValueError("mass must be non-negative")
    return spec.safety_factor * mass * spec.gravity / (2 * spec.friction)


# ---------------------------------------------------------------------------
# Closing on an object


@dataclass
class GripperState:
    """Finger openings are contact-face distances from the centerline (mm)."""

    left: float = 53.12
    right: float = 53.12
    force_left: float = 0.0
    force_right: float = 0.0

    @property
    def aperture(self) -> float:
        return self.left + self.right


@dataclass
class GraspOutcome:
    first: str                      # "left", "right" or "both"
    contact_aperture_left: float
    contact_aperture_right: float
    contact_angles: tuple[float, float]
    force_left: float
    force_right: float
    setting: int
    object_shift: float
    state: GripperState
    trace: list[tuple[float, float, float, float]] = field(default_factory=list)
    phase_times: dict[str, float | None] = field(default_factory=dict)


@dataclass(frozen=True)
class Gripper:
    """Bundle of the calibrated models a simulated gripper needs."""

    force: ForceModel
    linkage: LinkageModel
    grasp: GraspSpec = GraspSpec()
    finger_friction: tuple[float, float] = (0.0, 0.0)  # (left, right) drag while moving, N
    speed: float = 2.0        # mm per simulation step per finger
    ramp_steps: int = 10
    hold_steps: int = 10
    dt: float = 0.02          # s per step

    def close_on_object(self, state: GripperState, object_width: float, object_offset: float,
                        force_limit: float, hold_force: float = math.inf,
                        release: bool = False) -> GraspOutcome:
        return close_on_object(state, object_width, object_offset, force_limit,
                               hold_force=hold_force, gripper=self, release=release)


def close_on_object(state: GripperState, object_width: float, object_offset: float,
                    force_limit: float, *, hold_force: float = math.inf,
                    gripper: Gripper | None = None, release: bool = False) -> GraspOutcome:
    """Close both fingers independently on an object centred at ``object_offset``
    (positive toward the right finger).

    The finger that reaches the object first stops there and its force ramps
    to the commanded limit while the other keeps closing. If that force
    exceeds ``hold_force`` (the static friction holding the object down) the
    object is pushed along until the second finger arrives. Once both fingers
    touch, both ramp to the limit. With ``release`` the fingers then open
    back to where they started.
    """
    g = gripper or default_gripper()
    if force_limit > g.force.max_force:
        raise ForceLimitExceedsModel(f"force limit {force_limit} N exceeds {g.force.max_force} N")
    if force_limit <= 0:
        raise ValueError("force limit must be positive")
    half = object_width / 2
    if object_width > state.aperture or object_offset + half > state.right + 1e-9 \
            or half - object_offset > state.left + 1e-9:
        raise ObjectTooWide(f"object of width {object_width} mm does not fit between the fingers")

    f_cmd = quantize_force(g.force, force_limit)
    setting = force_to_setting(g.force, min(f_cmd, g.force.max_force))
    fric_l, fric_r = g.finger_friction
    left, right = state.left, state.right
    center = object_offset
    fl = fr = 0.0
    t = 0.0
    trace: list[tuple[float, float, float, float]] = []
    phases: dict[str, float | None] = {"first_contact": None, "both_contact": None, "open": None}
    contact_l = contact_r = None
    touch_l = touch_r = False

    def record():
        trace.append((round(t, 10), left + right, fl, fr))

    record()
    step_force = f_cmd / g.ramp_steps
    v = g.speed
    while not (touch_l and touch_r):
        # a lone touching finger ramps its force; past the hold force it pushes
        push = 0.0
        if touch_r and not touch_l:
            fr = min(fr + step_force, f_cmd)
            if fr > hold_force:
                fr, push = hold_force, -v
        elif touch_l and not touch_r:
            fl = min(fl + step_force, f_cmd)
            if fl > hold_force:
                fl, push = hold_force, v
        # shorten the step so a contact lands exactly on the object face
        frac = 1.0
        if not touch_r:
            frac = min(frac, (right - center - half) / (v + push))
        if not touch_l:
            frac = min(frac, (left - half + center) / (v - push))
        frac = max(frac, 0.0)
        t += g.dt * frac
        center += push * frac
        if touch_r:
            right = center + half
        else:
            right -= v * frac
            fr = fric_r
        if touch_l:
            left = half - center
        else:
            left -= v * frac
            fl = fric_l
        new_r = not touch_r and right - center - half <= 1e-9
        new_l = not touch_l and left - half + center <= 1e-9
        if new_r:
            right, touch_r, fr = center + half, True, 0.0
        if new_l:
            left, touch_l, fl = half - center, True, 0.0
        if new_r:
            contact_r = left + right
        if new_l:
            contact_l = left + right
        if (new_r or new_l) and phases["first_contact"] is None:
            phases["first_contact"] = t
        record()
    phases["both_contact"] = t

    for _ in range(g.ramp_steps):
        t += g.dt
        fl = min(max(fl, 0.0) + step_force, f_cmd)
        fr = min(max(fr, 0.0) + step_force, f_cmd)
        record()
    for _ in range(g.hold_steps):
        t += g.dt
        record()
    final_l, final_r = fl, fr
    held = GripperState(left, right, final_l, final_r)

    if release:
        t += g.dt
        phases["open"] = t
        fl = fr = 0.0
        record()
        while left < state.left - 1e-12 or right < state.right - 1e-12:
            t += g.dt
            left = min(left + g.speed, state.left)
            right = min(right + g.speed, state.right)
            fl, fr = fric_l, fric_r
            record()

    first = "both" if contact_l == contact_r else ("right" if contact_r > contact_l else "left")
    angles = (g.linkage.angle_for_opening(held.left), g.linkage.angle_for_opening(held.right))
    return GraspOutcome(first, contact_l, contact_r, angles, final_l, final_r, setting,
                        center - object_offset, held, trace, phases)


def write_force_trace(trace: Sequence[tuple[float, float, float, float]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "aperture_mm", "force_left_N", "force_right_N"])
        for t, ap, fl, fr in trace:
            w.writerow([f"{t:.4f}", f"{ap:.4f}", f"{fl:.4f}", f"{fr:.4f}"])


# ---------------------------------------------------------------------------
# Configuration


def _default_config() -> dict:
    text = resources.files("magpie_sim").joinpath("data/gripper.json").read_text()
    return json.loads(text)


def gripper_from_config(cfg: dict | None = None) -> Gripper:
    """Build a :class:`Gripper` from the shipped defaults, overridden by ``cfg``."""
    base = _default_config()
    for key, val in (cfg or {}).items():
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            base[key] = {**base[key], **val}
        else:
            base[key] = val
    lk = base["linkage"]
    linkage = LinkageModel(
        crank=lk["crank"], coupler=lk["coupler"], rocker=lk["rocker"],
        crank_pivot=tuple(lk["crank_pivot"]), rocker_pivot=tuple(lk["rocker_pivot"]),
        pad=tuple(lk["pad"]), crank_range=tuple(lk["crank_range"]),
        max_aperture=lk.get("max_aperture", 106.24), stall_torque=lk.get("stall_torque", 1.5))
    force = ForceModel(**base.get("force", {}))
    grasp = GraspSpec(**base.get("grasp", {}))
    extra = {k: base[k] for k in ("speed", "ramp_steps", "hold_steps", "dt") if k in base}
    if "finger_friction" in base:
        extra["finger_friction"] = tuple(base["finger_friction"])
    return Gripper(force, linkage, grasp, **extra)


_DEFAULT: Gripper | None = None


def default_gripper() -> Gripper:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = gripper_from_config()
    return _DEFAULT
