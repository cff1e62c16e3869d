"""Simulated palm camera and the perception chain behind the planner.

render -> segment -> (pca_orientation, grasp_from_bbox, spatial_relations).
The detector is a ground-truth oracle: points carry the label of the cuboid
they were sampled from, and ``DetectionNoise`` corrupts that.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .geometry import Box, look_at, ray_box_entry
from .pddl import Atom


class DegenerateCloud(ValueError):
    pass


class NoFeasibleGrasp(ValueError):
    pass


@dataclass(frozen=True)
class CameraModel:
    # smallest detectable object (0.1 mm) is a sensor datasheet figure with
    # no role in the simulation
    fov_h: float = 87.0
    fov_v: float = 58.0
    min_range: float = 70.0
    max_range: float = 500.0
    resolution: tuple[int, int] = (1280, 720)
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: tuple[tuple[float, ...], ...] = ((1.0, 0.0, 0.0), (0.0, -1.0, 0.0), (0.0, 0.0, -1.0))

    def __post_init__(self):
        if not 0 < self.min_range < self.max_range:
            raise ValueError("need 0 < min_range < max_range")
        if not (0 < self.fov_h < 180 and 0 < self.fov_v < 180):
            raise ValueError("field of view must lie in (0, 180) degrees")

    @classmethod
    def looking_at(cls, eye, target, **kw) -> "CameraModel":
        r = look_at(eye, target)
        return cls(position=tuple(float(v) for v in eye),
                   rotation=tuple(tuple(float(v) for v in row) for row in r), **kw)

    @classmethod
    def at_pose(cls, position, rotation, **kw) -> "CameraModel":
        rot = np.asarray(rotation, float)
        return cls(position=tuple(float(v) for v in position),
                   rotation=tuple(tuple(float(v) for v in row) for row in rot), **kw)

    @property
    def R(self) -> np.ndarray:
        """Camera-to-world rotation; columns are the camera x (right), y (down), z (forward)."""
        return np.array(self.rotation, float)

    @property
    def origin(self) -> np.ndarray:
        return np.array(self.position, float)

    def to_camera(self, world_pts: np.ndarray) -> np.ndarray:
        return (np.asarray(world_pts, float) - self.origin) @ self.R

    def to_world(self, cam_pts: np.ndarray) -> np.ndarray:
        return np.asarray(cam_pts, float) @ self.R.T + self.origin

    def in_view(self, cam_pts: np.ndarray) -> np.ndarray:
        p = np.asarray(cam_pts, float).reshape(-1, 3)
        z = p[:, 2]
        th = math.tan(math.radians(self.fov_h) / 2)
        tv = math.tan(math.radians(self.fov_v) / 2)
        return ((z >= self.min_range) & (z <= self.max_range)
                & (np.abs(p[:, 0]) <= th * z) & (np.abs(p[:, 1]) <= tv * z))


@dataclass
class PointCloud:
    points: np.ndarray                     # (N, 3) camera frame, mm
    labels: np.ndarray | None = None       # (N,) object names
    camera: CameraModel = field(default_factory=CameraModel)

    def __len__(self) -> int:
        return len(self.points)

    def world_points(self) -> np.ndarray:
        return self.camera.to_world(self.points)

    def stripped(self) -> "PointCloud":
        return PointCloud(self.points, None, self.camera)


def _boxes_of(scene) -> dict[str, Box]:
    if isinstance(scene, Mapping):
        return dict(scene)
    return scene.visible_boxes()


def render(scene, cam: CameraModel, density: float = 0.2, seed: int = 0) -> PointCloud:
    """Sample camera-facing cuboid faces, then cull by frustum and occlusion.

    ``scene`` is anything with ``visible_boxes() -> {name: Box}`` (a world
    Scene, which leaves out the held object) or such a mapping directly.
    Each facing face receives round(density * area) uniform samples.
    """
    if density <= 0:
        raise ValueError("density must be positive")
    boxes = _boxes_of(scene)
    names = sorted(boxes)
    rng = np.random.default_rng(seed)
    eye = cam.origin
    chunks, labels = [], []
    for name in names:
        box = boxes[name]
        for k in range(3):
            a, b = [j for j in range(3) if j != k]
            area = 4 * box.half[a] * box.half[b]
            n = int(round(density * area))
            for sign in (-1.0, 1.0):
                normal = sign * box.rotation[:, k]
                face_c = box.center + normal * box.half[k]
                if normal @ (eye - face_c) <= 0 or n == 0:
                    continue
                uv = rng.uniform(-1.0, 1.0, size=(n, 2))
                pts = (face_c + np.outer(uv[:, 0] * box.half[a], box.rotation[:, a])
                       + np.outer(uv[:, 1] * box.half[b], box.rotation[:, b]))
                chunks.append(pts)
                labels.extend([name] * n)
    if not chunks:
        return PointCloud(np.zeros((0, 3)), np.array([], dtype=object), cam)
    world = np.vstack(chunks)
    lab = np.array(labels, dtype=object)

    keep = cam.in_view(cam.to_camera(world))
    world, lab = world[keep], lab[keep]
    visible = np.ones(len(world), bool)
    for name in names:
        others = lab != name
        if not others.any():
            continue
        t = ray_box_entry(eye, world[others], boxes[name])
        idx = np.flatnonzero(others)
        visible[idx[t < 1.0 - 1e-9]] = False
    world, lab = world[visible], lab[visible]
    return PointCloud(cam.to_camera(world), lab, cam)


def merge_clouds(clouds: Iterable[PointCloud]) -> tuple[np.ndarray, np.ndarray]:
    """World-frame points and labels of several views stacked together."""
    pts, labs = [], []
    for c in clouds:
        pts.append(c.world_points())
        labs.append(c.labels if c.labels is not None else np.full(len(c), "", dtype=object))
    if not pts:
        return np.zeros((0, 3)), np.array([], dtype=object)
    return np.vstack(pts), np.concatenate(labs)


def write_ply(cloud: PointCloud, path: str | Path) -> None:
    """ASCII PLY with x y z (camera frame) and an integer label index.

    Label names are listed in header comments; -1 marks unlabeled points.
    """
    labels = cloud.labels if cloud.labels is not None else np.full(len(cloud), None, dtype=object)
    names = sorted({l for l in labels if l})
    ids = {n: i for i, n in enumerate(names)}
    lines = ["ply", "format ascii 1.0"]
    lines += [f"comment label {i} {n}" for n, i in ids.items()]
    lines += [f"element vertex {len(cloud)}", "property float x", "property float y",
              "property float z", "property int label", "end_header"]
    for p, l in zip(cloud.points, labels):
        lines.append(f"{p[0]:.4f} {p[1]:.4f} {p[2]:.4f} {ids.get(l, -1)}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Segmentation


@dataclass(frozen=True)
class DetectionNoise:
    p_miss: float = 0.0
    p_swap: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        for name in ("p_miss", "p_swap"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


@dataclass
class LabeledCluster:
    label: str
    points: np.ndarray  # (N, 3) world frame

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0), self.points.max(axis=0)


def segment(cloud: PointCloud | tuple[np.ndarray, np.ndarray], noise: DetectionNoise = DetectionNoise(),
            seed: int = 0) -> list[LabeledCluster]:
    """Group points by ground-truth label, then corrupt per ``noise``.

    Accepts a single cloud or the (world points, labels) pair from
    ``merge_clouds``. Clusters come back sorted by (reported) label.
    """
    if isinstance(cloud, PointCloud):
        pts = cloud.world_points()
        labels = cloud.labels if cloud.labels is not None else np.full(len(cloud), "", dtype=object)
    else:
        pts, labels = cloud
    rng = np.random.default_rng(seed)
    names = sorted({l for l in labels if l})
    clusters = []
    for name in names:
        sel = pts[labels == name]
        # draw all variates unconditionally so streams stay aligned across noise settings
        missed = rng.random() < noise.p_miss
        jitter = rng.normal(0.0, 1.0, size=sel.shape) * noise.sigma
        if missed:
            continue
        clusters.append(LabeledCluster(name, sel + jitter if noise.sigma > 0 else sel.copy()))
    if noise.p_swap > 0 and len(clusters) >= 2:
        for i in range(len(clusters)):
            if rng.random() < noise.p_swap:
                j = int(rng.integers(len(clusters) - 1))
                j += j >= i
                clusters[i].label, clusters[j].label = clusters[j].label, clusters[i].label
    return sorted(clusters, key=lambda c: c.label)


# ---------------------------------------------------------------------------
# PCA


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigen-decomposition of a small symmetric matrix.

    Returns (eigenvalues, eigenvectors as columns), unsorted.
    """
    a = np.array(a, float)
    n = a.shape[0]
    v = np.eye(n)
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = math.sqrt(sum(a[p, q] ** 2 for p in range(n) for q in range(p + 1, n)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    return np.diag(a).copy(), v


def _canonical_sign(axis: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    for k in range(3):
        if abs(axis[k]) > eps:
            return axis if axis[k] > 0 else -axis
    return axis


@dataclass(frozen=True)
class PcaResult:
    centroid: np.ndarray
    axes: np.ndarray      # rows, descending variance
    extents: np.ndarray
    center: np.ndarray    # midpoint of the oriented box
    ambiguous: bool = False
    variances: np.ndarray | None = None

    def __iter__(self):
        return iter((self.centroid, self.axes, self.extents))


def pca_orientation(points, rel_tol: float = 1e-9) -> PcaResult:
    pts = np.asarray(points, float).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateCloud(f"need at least 3 points, got {len(pts)}")
    centroid = pts.mean(axis=0)
    d = pts - centroid
    cov = d.T @ d / len(pts)
    vals, vecs = jacobi_eigh(cov)
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    top = vals[0]
    if top <= 1e-9 or vals[1] <= rel_tol * top:
        raise DegenerateCloud("points are coincident or collinear")
    ambiguous = (vals[0] - vals[1] <= rel_tol * top) or (vals[1] - vals[2] <= rel_tol * top)
    if ambiguous:
        var = np.diag(cov)
        axes = np.eye(3)[np.argsort(-var, kind="stable")]
    else:
        axes = np.array([_canonical_sign(vecs[:, k]) for k in range(3)])
    proj = d @ axes.T
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    center = centroid + ((lo + hi) / 2) @ axes
    return PcaResult(centroid, axes, hi - lo, center, ambiguous, vals)


# ---------------------------------------------------------------------------
# Grasps


@dataclass(frozen=True)
class GraspPose:
    position: np.ndarray
    orientation: np.ndarray   # columns: grip axis, binormal, approach
    grip_width: float
    extents: tuple[float, float, float] = (0.0, 0.0, 0.0)  # grip, cross, height

    @property
    def approach_axis(self) -> np.ndarray:
        return self.orientation[:, 2]

    @property
    def grip_axis(self) -> np.ndarray:
        return self.orientation[:, 0]

    @property
    def yaw(self) -> float:
        x = self.orientation[:, 0]
        return math.atan2(x[1], x[0])

    @property
    def height(self) -> float:
        return self.extents[2]


MAX_APERTURE = 106.24


def _horizontal_candidates(pca: PcaResult, rel: np.ndarray) -> list[np.ndarray]:
    out = []
    for axis in pca.axes:
        h = np.array([axis[0], axis[1], 0.0])
        n = np.linalg.norm(h)
        if n >= math.sqrt(0.5):  # mostly vertical axes cannot be gripped from above
            out.append(h / n)
    return out + _caliper_directions(rel[:, :2])


def _caliper_directions(xy: np.ndarray) -> list[np.ndarray]:
    # square-ish footprints leave the PCA yaw at the mercy of sampling; the
    # minimum-width rectangle is aligned with an edge of the convex hull
    from scipy.spatial import ConvexHull, QhullError
    try:
        hull = xy[ConvexHull(xy).vertices]
    except (QhullError, ValueError):
        return [np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])]
    out = []
    for p, q in zip(hull, np.roll(hull, -1, axis=0)):
        e = q - p
        n = np.linalg.norm(e)
        if n < 1e-9:
            continue
        e /= n
        out.append(np.array([e[0], e[1], 0.0]))
        out.append(np.array([-e[1], e[0], 0.0]))
    return out


def grasp_from_bbox(cluster: LabeledCluster | np.ndarray, gripper_max: float = MAX_APERTURE) -> GraspPose:
    """Top-down grasp across the narrowest horizontal extent of the object's box.

    Candidate grip axes are the mostly-horizontal PCA axes plus the edge
    normals of the footprint's convex hull; partial views of near-cubic
    objects leave the PCA yaw poorly determined, the hull edges do not.
    Ties go to the axis closest to world X.
    """
    pts = cluster.points if isinstance(cluster, LabeledCluster) else np.asarray(cluster, float)
    pca = pca_orientation(pts)
    rel = pts - pca.center
    best = None
    for h in _horizontal_candidates(pca, rel):
        if h[0] < -1e-12 or (abs(h[0]) <= 1e-12 and h[1] < 0):
            h = -h
        proj = rel @ h
        width = float(proj.max() - proj.min())
        if width > gripper_max:
            continue
        key = (round(width, 6), -round(abs(h[0]), 9))
        if best is None or key < best[0]:
            best = (key, h, width)
    if best is None:
        raise NoFeasibleGrasp(f"no horizontal extent fits within {gripper_max} mm")
    _, x, width = best
    z = np.array([0.0, 0.0, -1.0])
    y = np.cross(z, x)
    rot = np.column_stack([x, y, z])
    py = rel @ y
    px = rel @ x
    # center of the grip-aligned footprint rectangle, vertical middle of the cloud
    center = pca.center + x * (px.max() + px.min()) / 2 + y * (py.max() + py.min()) / 2
    center[2] = (pts[:, 2].max() + pts[:, 2].min()) / 2
    cross = float(np.ptp(py))
    height = float(np.ptp(pts[:, 2]))
    return GraspPose(center, rot, width, (width, cross, height))


# ---------------------------------------------------------------------------
# Relations


@dataclass(frozen=True)
class RelationConfig:
    eps_z: float = 5.0
    overlap_fraction: float = 0.5


def spatial_relations(clusters: Iterable[LabeledCluster], table_z: float = 0.0,
                      config: RelationConfig = RelationConfig()) -> set[Atom]:
    """on / ontable / clear from world-axis bounding boxes of the clusters."""
    boxes = []
    for c in clusters:
        lo, hi = c.aabb()
        boxes.append((c.label, lo, hi))
    facts: set[Atom] = set()
    supported: set[str] = set()
    for a, alo, ahi in boxes:
        if abs(alo[2] - table_z) <= config.eps_z:
            facts.add(Atom("ontable", (a,)))
        for b, blo, bhi in boxes:
            if a == b:
                continue
            if abs(alo[2] - bhi[2]) > config.eps_z:
                continue
            ca, cb = (alo[:2] + ahi[:2]) / 2, (blo[:2] + bhi[:2]) / 2
            ext = min(*(ahi[:2] - alo[:2]), *(bhi[:2] - blo[:2]))
            if np.linalg.norm(ca - cb) < config.overlap_fraction * ext:
                facts.add(Atom("on", (a, b)))
                supported.add(b)
    for a, _, _ in boxes:
        if a not in supported:
            facts.add(Atom("clear", (a,)))
    return facts
