"""Small rigid-body geometry helpers shared by the world and perception."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def top_down(yaw: float = 0.0) -> np.ndarray:
    """End-effector frame pointing straight down: x = grip axis, z = approach."""
    c, s = math.cos(yaw), math.sin(yaw)
    x = np.array([c, s, 0.0])
    z = np.array([0.0, 0.0, -1.0])
    return np.column_stack([x, np.cross(z, x), z])


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera rotation (columns: right, down, forward) looking from eye to target."""
    eye = np.asarray(eye, float)
    fwd = np.asarray(target, float) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, float))
    n = np.linalg.norm(right)
    if n < 1e-9:
        # looking along ``up``: keep image right on world +x
        right = np.array([1.0, 0.0, 0.0]) - fwd[0] * fwd
        n = np.linalg.norm(right)
        if n < 1e-9:
            right, n = np.array([0.0, 1.0, 0.0]), 1.0
    right /= n
    down = np.cross(fwd, right)
    return np.column_stack([right, down, fwd])


def heading(rotation: np.ndarray) -> float:
    """Yaw of the rotation's x axis projected onto the table plane."""
    x = rotation[:, 0]
    return math.atan2(x[1], x[0])


@dataclass(frozen=True)
class Box:
    center: np.ndarray
    half: np.ndarray
    rotation: np.ndarray

    @classmethod
    def upright(cls, center, size, yaw: float = 0.0) -> "Box":
        return cls(np.asarray(center, float), np.asarray(size, float) / 2, rot_z(yaw))

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
        return self.center + (signs * self.half) @ self.rotation.T

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        ext = np.abs(self.rotation) @ self.half
        return self.center - ext, self.center + ext

    def extent_along(self, direction) -> float:
        """Full width of the box projected on a unit direction."""
        d = np.asarray(direction, float)
        return float(2 * np.sum(np.abs(self.rotation.T @ d) * self.half))


def aabbs_overlap(lo1, hi1, lo2, hi2, tol: float = 0.0) -> bool:
    return bool(np.all(lo1 < hi2 - tol) and np.all(lo2 < hi1 - tol))


def boxes_overlap(a: Box, b: Box, tol: float = 0.1) -> bool:
    """Separating-axis test; boxes touching or interpenetrating by < ``tol`` do not count."""
    ra_axes = a.rotation.T
    rb_axes = b.rotation.T
    t = b.center - a.center
    axes = list(ra_axes) + list(rb_axes)
    for u in ra_axes:
        for v in rb_axes:
            c = np.cross(u, v)
            n = np.linalg.norm(c)
            if n > 1e-9:
                axes.append(c / n)
    for ax in axes:
        ra = np.sum(np.abs(ra_axes @ ax) * a.half)
        rb = np.sum(np.abs(rb_axes @ ax) * b.half)
        if abs(t @ ax) >= ra + rb - tol:
            return False
    return True


def footprints_overlap(a: Box, b: Box, tol: float = 1e-6) -> bool:
    """Do the table-plane projections of two upright boxes overlap?"""
    ca, cb = a.center[:2], b.center[:2]
    axes = [a.rotation[:2, 0], a.rotation[:2, 1], b.rotation[:2, 0], b.rotation[:2, 1]]
    t = cb - ca
    for ax in axes:
        n = np.linalg.norm(ax)
        if n < 1e-12:
            continue
        ax = ax / n
        ra = abs(a.rotation[:2, 0] @ ax) * a.half[0] + abs(a.rotation[:2, 1] @ ax) * a.half[1]
        rb = abs(b.rotation[:2, 0] @ ax) * b.half[0] + abs(b.rotation[:2, 1] @ ax) * b.half[1]
        if abs(t @ ax) >= ra + rb - tol:
            return False
    return True


def ray_box_entry(origin: np.ndarray, targets: np.ndarray, box: Box) -> np.ndarray:
    """Entry parameter t along origin + t*(target - origin) into ``box`` (inf on a miss).

    Slab test in the box frame, vectorized over targets.
    """
    o = (origin - box.center) @ box.rotation
    d = (targets - origin) @ box.rotation
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-box.half - o) * inv
        t2 = (box.half - o) * inv
    lo = np.minimum(t1, t2)
    hi = np.maximum(t1, t2)
    # rays parallel to a slab: inside -> unbounded, outside -> miss
    par = d == 0
    inside = np.abs(o) <= box.half
    lo = np.where(par, np.where(inside, -np.inf, np.inf), lo)
    hi = np.where(par, np.where(inside, np.inf, -np.inf), hi)
    t_near = lo.max(axis=1)
    t_far = hi.min(axis=1)
    hit = (t_near <= t_far) & (t_far > 0)
    return np.where(hit, np.maximum(t_near, 0.0), np.inf)
