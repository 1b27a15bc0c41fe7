"""Vision-based objectives as convex quadratics over the lifted coordinates.

Every cost is a weighted sum of squared affine forms, so it is convex by
construction and second-order-cone representable.  On exact rank-1 blocks each
cost equals the corresponding geometric quantity computed from forward
kinematics; :func:`geometric_cost` evaluates that reference form directly and
doubles as the bench oracle's objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lift import AffineExpr, LiftedProgram
from .scene import CAMERA_KEY, CameraIntrinsics, Scene

COST_TYPES = ("levelness", "centering", "centering_close", "reprojection", "pose")

WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass
class QuadraticCost:
    """Sum over terms of weight * ||affine expression||^2."""

    terms: list = field(default_factory=list)  # list[(weight, AffineExpr)]

    def add(self, weight: float, expr: AffineExpr):
        if weight < 0:
            raise ValueError("cost weights must be nonnegative")
        self.terms.append((float(weight), expr))
        return self

    def value(self, x: np.ndarray) -> float:
        total = 0.0
        for w, e in self.terms:
            r = e.evaluate(x)
            total += w * float(r @ r)
        return total


def combine(items) -> QuadraticCost:
    """Linear combination of costs: [(cost, weight), ...]."""
    out = QuadraticCost()
    for cost, weight in items:
        if weight < 0:
            raise ValueError("cost weights must be nonnegative")
        for w, e in cost.terms:
            out.terms.append((w * weight, e))
    return out


@dataclass(frozen=True)
class ImageTarget:
    """Per-point image coordinates relative to the principal point."""

    coords: np.ndarray  # (n, 2)

    def __post_init__(self):
        arr = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(arr)):
            raise ValueError("image targets must be finite")
        object.__setattr__(self, "coords", arr)

    def unit_rays(self, intr: CameraIntrinsics) -> np.ndarray:
        """Unit viewing rays in camera coordinates, one per target."""
        rays = np.column_stack([self.coords,
                                np.full(len(self.coords), intr.focal_length)])
        return rays / np.linalg.norm(rays, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# builders over a lifted program


def levelness(program: LiftedProgram) -> QuadraticCost:
    """Squared distance of the camera's image-up axis from the world z-axis."""
    expr = program.layout.camera_rotation.col(1).shifted(-WORLD_UP)
    return QuadraticCost().add(1.0, expr)


def centering_angular(program: LiftedProgram) -> QuadraticCost:
    """Sum of squared chords between each viewing ray and the camera z-axis."""
    cam = program.layout.camera_rotation.col(2)
    cost = QuadraticCost()
    for chain in program.aug.chains:
        ray = program.layout.link_rotation[chain.rotation_id].col(2)
        cost.add(1.0, ray - cam)
    return cost


def centering_proximal(program: LiftedProgram) -> QuadraticCost:
    """Centers the points while drawing the camera to unit distance from them."""
    cam_t = program.translations[CAMERA_KEY]
    cam_axis = program.layout.camera_rotation.col(2)
    cost = QuadraticCost()
    for chain in program.aug.chains:
        expr = (cam_t + cam_axis).scaled(-1.0).shifted(chain.point)
        cost.add(1.0, expr)
    return cost


def reprojection(program: LiftedProgram, targets: ImageTarget,
                 intr: CameraIntrinsics | None = None) -> QuadraticCost:
    """Spherical reprojection error against given image targets.

    Each target's fixed unit ray (camera coordinates) is rotated into the
    world frame through the camera rotation and compared with the chain's
    viewing ray.
    """
    if intr is None:
        intr = program.aug.scene.camera
    if len(targets.coords) != len(program.aug.chains):
        raise ValueError(f"{len(targets.coords)} image targets for "
                         f"{len(program.aug.chains)} object points")
    rays = targets.unit_rays(intr)
    cam = program.layout.camera_rotation
    cost = QuadraticCost()
    for chain, ray in zip(program.aug.chains, rays):
        expr = program.layout.link_rotation[chain.rotation_id].col(2) - cam.times(ray)
        cost.add(1.0, expr)
    return cost


def pose_target(program: LiftedProgram, target, end_link: str) -> QuadraticCost:
    """Squared pose distance of ``end_link`` from a target pose."""
    if end_link not in program.translations:
        raise ValueError(f"unknown link {end_link!r}")
    t_expr = program.translations[end_link].shifted(-target.translation)
    r_expr = program.layout.link_rotation[end_link].vec9().shifted(
        -np.concatenate([target.rotation[:, 0], target.rotation[:, 1],
                         target.rotation[:, 2]]))
    return QuadraticCost().add(1.0, t_expr).add(1.0, r_expr)


# ---------------------------------------------------------------------------
# cost specifications (document form)


@dataclass(frozen=True)
class CostSpecItem:
    type: str
    weight: float = 1.0
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"type": self.type, "weight": self.weight, "params": dict(self.params)}


def parse_cost_specs(items) -> list[CostSpecItem]:
    """Validate a cost specification array from a scene/config document."""
    if not isinstance(items, (list, tuple)) or not items:
        raise ValueError("costs: expected a non-empty array")
    out = []
    for i, raw in enumerate(items):
        if isinstance(raw, CostSpecItem):
            out.append(raw)
            continue
        if not isinstance(raw, dict) or raw.get("type") not in COST_TYPES:
            raise ValueError(f"costs[{i}].type: expected one of {COST_TYPES}")
        weight = float(raw.get("weight", 1.0))
        if weight < 0:
            raise ValueError(f"costs[{i}].weight: must be nonnegative")
        out.append(CostSpecItem(raw["type"], weight, dict(raw.get("params", {}))))
    return out


def build_cost(program: LiftedProgram, specs) -> QuadraticCost:
    """Realize a cost specification over a lifted program."""
    specs = parse_cost_specs(specs)
    parts = []
    for item in specs:
        if item.type == "levelness":
            parts.append((levelness(program), item.weight))
        elif item.type == "centering":
            parts.append((centering_angular(program), item.weight))
        elif item.type == "centering_close":
            parts.append((centering_proximal(program), item.weight))
        elif item.type == "reprojection":
            targets = ImageTarget(np.asarray(item.params["targets"], dtype=float))
            parts.append((reprojection(program, targets), item.weight))
        elif item.type == "pose":
            from .scene import Pose
            target = Pose.from_dict(item.params["target"], "costs.pose.target")
            parts.append((pose_target(program, target, item.params["link"]), item.weight))
    return combine(parts)


# ---------------------------------------------------------------------------
# geometric reference evaluation (oracle side)


def _unit_rays_world(scene: Scene, frames: dict) -> np.ndarray:
    cam = frames[CAMERA_KEY]
    rays = scene.object_points - cam.translation
    return rays / np.linalg.norm(rays, axis=1, keepdims=True)


def geometric_cost(specs, scene: Scene, frames: dict) -> float:
    """Evaluate a cost specification directly from forward-kinematics frames.

    This is the independent geometric form each lifted cost reduces to on
    exact rank-1 blocks; it never touches the lift.
    """
    specs = parse_cost_specs(specs)
    cam = frames[CAMERA_KEY]
    total = 0.0
    for item in specs:
        if item.type == "levelness":
            d = cam.rotation[:, 1] - WORLD_UP
            total += item.weight * float(d @ d)
        elif item.type == "centering":
            rays = _unit_rays_world(scene, frames)
            d = rays - cam.rotation[:, 2]
            total += item.weight * float(np.sum(d * d))
        elif item.type == "centering_close":
            d = scene.object_points - cam.translation - cam.rotation[:, 2]
            total += item.weight * float(np.sum(d * d))
        elif item.type == "reprojection":
            targets = ImageTarget(np.asarray(item.params["targets"], dtype=float))
            world_rays = _unit_rays_world(scene, frames)
            cam_rays = targets.unit_rays(scene.camera) @ cam.rotation.T
            d = world_rays - cam_rays
            total += item.weight * float(np.sum(d * d))
        elif item.type == "pose":
            from .scene import Pose
            target = Pose.from_dict(item.params["target"], "costs.pose.target")
            pose = frames[item.params["link"]]
            dt = pose.translation - target.translation
            dR = pose.rotation - target.rotation
            total += item.weight * (float(dt @ dt) + float(np.sum(dR * dR)))
    return total


def render_targets(scene: Scene, frames: dict) -> ImageTarget:
    """Pinhole image coordinates of the object points for a given configuration.

    Coordinates are relative to the principal point in image-height units,
    i.e. the 2-D part of focal_length * (x/z, y/z) in camera coordinates.
    Points at or behind the camera plane are rejected.
    """
    cam = frames[CAMERA_KEY]
    local = (scene.object_points - cam.translation) @ cam.rotation
    if np.any(local[:, 2] <= 1e-9):
        raise ValueError("cannot render: object point not in front of the camera")
    coords = scene.camera.focal_length * local[:, :2] / local[:, 2:3]
    return ImageTarget(coords)
