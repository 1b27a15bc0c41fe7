"""Kinematic scene model: robot chain, wrist camera, and observed points.

A :class:`Scene` is an immutable description of a kinematic tree (revolute,
prismatic, spherical, and fixed joints), a camera rigidly mounted on one link,
and a set of known 3-D object points.  :func:`augment_with_virtual_chain`
attaches one virtual prismatic-plus-spherical chain per object point, which is
how the camera visibility constraint is later turned into a joint-style bound.

All rotations are 3x3 matrices, translations are meters, angles are radians.
Scenes and augmented scenes are immutable after construction and safe to share
across concurrent solves; every function here is pure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

UNIT_TOL = 1e-12
ROTATION_TOL = 1e-9

CAMERA_KEY = "camera"  # reserved frame name in FK output


class SceneError(ValueError):
    """Invalid scene document, joint configuration, or frame set."""


def _fail(path: str, message: str):
    raise SceneError(f"{path}: {message}")


def _as_vec3(value, path: str) -> np.ndarray:
    try:
        v = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        _fail(path, "expected a 3-vector of numbers")
    if v.shape != (3,):
        _fail(path, f"expected a 3-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        _fail(path, "entries must be finite")
    return v


def _as_rotation(value, path: str) -> np.ndarray:
    try:
        raw = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        _fail(path, "expected 9 row-major reals")
    if raw.shape == (9,):
        raw = raw.reshape(3, 3)
    if raw.shape != (3, 3):
        _fail(path, f"expected 9 row-major reals, got shape {raw.shape}")
    check_rotation(raw, path)
    return raw


def check_rotation(R: np.ndarray, path: str = "rotation"):
    """Validate membership in SO(3): orthonormal within 1e-9, det +1 within 1e-9."""
    if np.abs(R.T @ R - np.eye(3)).max() > ROTATION_TOL:
        _fail(path, "matrix is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
        _fail(path, "matrix determinant is not +1")


def _unit(value, path: str) -> np.ndarray:
    v = _as_vec3(value, path)
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        _fail(path, "axis not unit norm")
    return v


@dataclass(frozen=True)
class Pose:
    """Rigid transform: ``rotation`` in SO(3), ``translation`` in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        check_rotation(self.rotation)

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.translation + self.rotation @ other.translation)

    def transform(self, point: np.ndarray) -> np.ndarray:
        return self.translation + self.rotation @ point

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_dict(doc, path: str = "pose") -> "Pose":
        if not isinstance(doc, dict):
            _fail(path, "expected {rotation, translation}")
        R = _as_rotation(doc.get("rotation", np.eye(3).ravel().tolist()), f"{path}.rotation")
        t = _as_vec3(doc.get("translation", [0.0, 0.0, 0.0]), f"{path}.translation")
        return Pose(R, t)

    def to_dict(self) -> dict:
        return {"rotation": [float(v) for v in self.rotation.ravel()],
                "translation": [float(v) for v in self.translation]}


JOINT_KINDS = ("revolute", "prismatic", "spherical", "fixed")


@dataclass(frozen=True)
class JointSpec:
    """One edge of the kinematic tree.

    ``fixed_translation`` is the known child-frame origin expressed in the
    parent frame.  Revolute joints carry an axis and a reference vector
    (orthogonal to the axis) in both adjacent frames; the joint angle is the
    signed rotation from the parent's reference to the child's about the
    shared axis.  Prismatic joints slide along ``axis_in_parent`` with the
    physical extension in ``extension_limits``; the stored joint value is the
    normalized extension in [0, 1].  Spherical joints bound the angle between
    the two ``axis`` vectors by ``cone_half_angle``.
    """

    kind: str
    parent: str
    child: str
    fixed_translation: np.ndarray
    axis_in_parent: np.ndarray | None = None
    axis_in_child: np.ndarray | None = None
    reference_in_parent: np.ndarray | None = None
    reference_in_child: np.ndarray | None = None
    angle_limits: tuple[float, float] | None = None
    cone_half_angle: float | None = None
    extension_limits: tuple[float, float] | None = None
    fixed_rotation: np.ndarray | None = None

    @property
    def mid_angle(self) -> float:
        lo, hi = self.angle_limits
        return 0.5 * (lo + hi)

    @property
    def half_range(self) -> float:
        lo, hi = self.angle_limits
        return 0.5 * (hi - lo)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Conic field-of-view camera model mounted on ``mount_link``.

    The FoV is the right circular cone of half-angle
    ``tightness * arctan(image_height / (2 * focal_length))`` about the camera
    Z-axis; no full projection matrix is stored.
    """

    focal_length: float
    image_height: float
    tightness: float
    mount_link: str
    mount_pose: Pose

    def __post_init__(self):
        if not self.focal_length > 0:
            _fail("camera.focal_length", "must be positive")
        if not self.image_height > 0:
            _fail("camera.image_height", "must be positive")
        if not 0.0 < self.tightness <= 1.0:
            _fail("camera.tightness", "must be in (0, 1]")


def camera_aperture(intr: CameraIntrinsics) -> float:
    """Half-angle of the conic field of view, radians."""
    return intr.tightness * math.atan(intr.image_height / (2.0 * intr.focal_length))


@dataclass(frozen=True)
class Scene:
    """Immutable kinematic tree + camera + object points."""

    links: tuple[str, ...]
    base_link: str
    base_pose: Pose
    joints: tuple[JointSpec, ...]
    camera: CameraIntrinsics
    object_points: np.ndarray  # (n, 3)
    virtual_extension_bounds: tuple[float, float] | None = None
    _joint_order: tuple[int, ...] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self._joint_order is None:
            order = _topological_order(self.links, self.base_link, self.joints)
            object.__setattr__(self, "_joint_order", order)

    def joint_for_child(self, child: str) -> JointSpec:
        for j in self.joints:
            if j.child == child:
                return j
        raise SceneError(f"no joint with child link '{child}'")

    def topological_joints(self) -> list[JointSpec]:
        """Joints ordered parent-before-child starting at the base link."""
        return [self.joints[i] for i in self._joint_order]

    def total_chain_length(self) -> float:
        total = sum(float(np.linalg.norm(j.fixed_translation)) for j in self.joints)
        total += sum(j.extension_limits[1] for j in self.joints if j.kind == "prismatic")
        total += float(np.linalg.norm(self.camera.mount_pose.translation))
        return total


@dataclass(frozen=True)
class VirtualChain:
    """Virtual prismatic + spherical chain tying the camera center to one point.

    The chain introduces one unknown rotation (shared by the two prismatic
    frames) and one normalized extension.  By convention the chain's z-axis
    points from the camera center toward the object point, so
    ``point = camera_center + (tau_lo + tau * (tau_hi - tau_lo)) * R[:, 2]``.
    """

    index: int
    rotation_id: str
    point: np.ndarray
    tau_lo: float
    tau_hi: float


@dataclass(frozen=True)
class AugmentedScene:
    scene: Scene
    chains: tuple[VirtualChain, ...]


@dataclass(frozen=True)
class JointValues:
    """Joint configuration keyed by child link name.

    Revolute angles in radians, prismatic extensions normalized to [0, 1],
    spherical joints as relative rotation matrices.  Values are validated
    against the declared limits (never silently clamped).
    """

    angles: dict
    extensions: dict = field(default_factory=dict)
    sphericals: dict = field(default_factory=dict)

    def validate(self, scene: Scene, limit_slack: float = 1e-9):
        for joint in scene.joints:
            if joint.kind == "revolute":
                if joint.child not in self.angles:
                    _fail(f"values.angles.{joint.child}", "missing joint value")
                theta = self.angles[joint.child]
                lo, hi = joint.angle_limits
                if theta < lo - limit_slack or theta > hi + limit_slack:
                    _fail(f"values.angles.{joint.child}",
                          f"angle {theta:.6g} outside limits [{lo:.6g}, {hi:.6g}]")
            elif joint.kind == "prismatic":
                if joint.child not in self.extensions:
                    _fail(f"values.extensions.{joint.child}", "missing joint value")
                tau = self.extensions[joint.child]
                if tau < -limit_slack or tau > 1.0 + limit_slack:
                    _fail(f"values.extensions.{joint.child}",
                          f"normalized extension {tau:.6g} outside [0, 1]")
            elif joint.kind == "spherical":
                if joint.child not in self.sphericals:
                    _fail(f"values.sphericals.{joint.child}", "missing joint value")
                R = np.asarray(self.sphericals[joint.child], dtype=float)
                check_rotation(R, f"values.sphericals.{joint.child}")
                cosang = float(np.clip(joint.axis_in_parent @ (R @ joint.axis_in_child), -1, 1))
                if math.acos(cosang) > joint.cone_half_angle + limit_slack:
                    _fail(f"values.sphericals.{joint.child}", "outside cone limit")

    def to_dict(self) -> dict:
        return {
            "angles": {k: float(v) for k, v in self.angles.items()},
            "extensions": {k: float(v) for k, v in self.extensions.items()},
            "sphericals": {k: [float(x) for x in np.asarray(v).ravel()]
                           for k, v in self.sphericals.items()},
        }

    @staticmethod
    def from_dict(doc: dict) -> "JointValues":
        return JointValues(
            angles={k: float(v) for k, v in doc.get("angles", {}).items()},
            extensions={k: float(v) for k, v in doc.get("extensions", {}).items()},
            sphericals={k: np.asarray(v, dtype=float).reshape(3, 3)
                        for k, v in doc.get("sphericals", {}).items()},
        )


# ---------------------------------------------------------------------------
# parsing


def _parse_joint(doc, idx: int, links: set) -> JointSpec:
    path = f"joints[{idx}]"
    if not isinstance(doc, dict):
        _fail(path, "expected an object")
    kind = doc.get("kind")
    if kind not in JOINT_KINDS:
        _fail(f"{path}.kind", f"expected one of {JOINT_KINDS}, got {kind!r}")
    parent = doc.get("parent")
    child = doc.get("child")
    if parent not in links:
        _fail(f"{path}.parent", f"unknown link {parent!r}")
    if child not in links:
        _fail(f"{path}.child", f"unknown link {child!r}")
    t = _as_vec3(doc.get("fixed_translation", [0, 0, 0]), f"{path}.fixed_translation")

    axis_p = axis_c = ref_p = ref_c = None
    angle_limits = None
    cone = None
    ext_limits = None
    fixed_R = None

    if kind in ("revolute", "prismatic", "spherical"):
        if "axis_in_parent" not in doc:
            _fail(f"{path}.axis_in_parent", "required for this joint kind")
        axis_p = _unit(doc["axis_in_parent"], f"{path}.axis_in_parent")
        axis_c = _unit(doc.get("axis_in_child", doc["axis_in_parent"]), f"{path}.axis_in_child")

    if kind == "revolute":
        for key in ("reference_in_parent", "reference_in_child"):
            if key not in doc:
                _fail(f"{path}.{key}", "required for revolute joints")
        ref_p = _unit(doc["reference_in_parent"], f"{path}.reference_in_parent")
        ref_c = _unit(doc["reference_in_child"], f"{path}.reference_in_child")
        if abs(float(ref_p @ axis_p)) > UNIT_TOL:
            _fail(f"{path}.reference_in_parent", "reference not orthogonal to axis")
        if abs(float(ref_c @ axis_c)) > UNIT_TOL:
            _fail(f"{path}.reference_in_child", "reference not orthogonal to axis")
        lims = doc.get("angle_limits")
        if not isinstance(lims, (list, tuple)) or len(lims) != 2:
            _fail(f"{path}.angle_limits", "expected [lo, hi]")
        lo, hi = float(lims[0]), float(lims[1])
        if not lo < hi:
            _fail(f"{path}.angle_limits", "lower limit must be below upper limit")
        if hi - lo >= 2 * math.pi:
            _fail(f"{path}.angle_limits", "range must be below 2*pi")
        angle_limits = (lo, hi)
    elif kind == "prismatic":
        if np.abs(axis_p - axis_c).max() > 1e-9:
            _fail(f"{path}.axis_in_child",
                  "prismatic joints share one rotation; both axes must match")
        lims = doc.get("extension_limits")
        if not isinstance(lims, (list, tuple)) or len(lims) != 2:
            _fail(f"{path}.extension_limits", "expected [lo, hi]")
        lo, hi = float(lims[0]), float(lims[1])
        if not lo < hi:
            _fail(f"{path}.extension_limits", "lower limit must be below upper limit")
        ext_limits = (lo, hi)
    elif kind == "spherical":
        raw = doc.get("angle_limits")
        if isinstance(raw, (list, tuple)):
            if len(raw) != 1:
                _fail(f"{path}.angle_limits", "spherical joints take one cone half-angle")
            raw = raw[0]
        if raw is None:
            _fail(f"{path}.angle_limits", "cone half-angle required")
        cone = float(raw)
        if not 0 < cone <= math.pi:
            _fail(f"{path}.angle_limits", "cone half-angle must be in (0, pi]")
    elif kind == "fixed":
        fixed_R = _as_rotation(doc.get("fixed_rotation", np.eye(3).ravel().tolist()),
                               f"{path}.fixed_rotation")

    return JointSpec(kind=kind, parent=parent, child=child, fixed_translation=t,
                     axis_in_parent=axis_p, axis_in_child=axis_c,
                     reference_in_parent=ref_p, reference_in_child=ref_c,
                     angle_limits=angle_limits, cone_half_angle=cone,
                     extension_limits=ext_limits, fixed_rotation=fixed_R)


def _topological_order(links, base: str, joints) -> tuple[int, ...]:
    by_child = {}
    for i, j in enumerate(joints):
        if j.child == base:
            _fail(f"joints[{i}].child", "base link cannot be a joint child")
        if j.child in by_child:
            _fail(f"joints[{i}].child", f"link {j.child!r} has two parent joints; "
                                        "joint graph is not a tree")
        by_child[j.child] = i
    if len(joints) != len(links) - 1:
        raise SceneError("joints: joint graph is not a tree "
                         f"({len(joints)} joints for {len(links)} links)")
    reached = {base}
    order = []
    pending = list(range(len(joints)))
    while pending:
        progress = []
        for i in pending:
            if joints[i].parent in reached:
                reached.add(joints[i].child)
                order.append(i)
            else:
                progress.append(i)
        if len(progress) == len(pending):
            raise SceneError("joints: joint graph is not a tree (cycle or disconnected link)")
        pending = progress
    return tuple(order)


def parse_scene(text) -> Scene:
    """Parse a scene document (JSON text or an equivalent dict) into a Scene.

    Raises :class:`SceneError` naming the offending path on any schema or
    invariant violation.  Parsing is deterministic.
    """
    if isinstance(text, (str, bytes)):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SceneError(f"document: invalid JSON ({exc})") from exc
    else:
        doc = text
    if not isinstance(doc, dict):
        _fail("document", "expected a JSON object")

    links = doc.get("links")
    if not isinstance(links, list) or not links or not all(isinstance(l, str) for l in links):
        _fail("links", "expected a non-empty array of link names")
    if len(set(links)) != len(links):
        _fail("links", "link names must be unique")
    if CAMERA_KEY in links:
        _fail("links", f"link name {CAMERA_KEY!r} is reserved for the camera frame")
    link_set = set(links)

    base_doc = doc.get("base")
    if not isinstance(base_doc, dict) or base_doc.get("name") not in link_set:
        _fail("base", "expected {name: <link>, pose: {...}}")
    base_link = base_doc["name"]
    base_pose = Pose.from_dict(base_doc.get("pose", {}), "base.pose")

    joints_doc = doc.get("joints", [])
    if not isinstance(joints_doc, list):
        _fail("joints", "expected an array")
    joints = tuple(_parse_joint(j, i, link_set) for i, j in enumerate(joints_doc))
    order = _topological_order(links, base_link, joints)

    cam_doc = doc.get("camera")
    if not isinstance(cam_doc, dict):
        _fail("camera", "expected an object")
    mount = cam_doc.get("mount_link")
    if mount not in link_set:
        _fail("camera.mount_link", f"unknown link {mount!r}")
    camera = CameraIntrinsics(
        focal_length=float(cam_doc.get("focal_length", 0.0)),
        image_height=float(cam_doc.get("image_height", 0.0)),
        tightness=float(cam_doc.get("tightness", 1.0)),
        mount_link=mount,
        mount_pose=Pose.from_dict(cam_doc.get("mount_pose", {}), "camera.mount_pose"),
    )

    pts_doc = doc.get("object_points", [])
    if not isinstance(pts_doc, list):
        _fail("object_points", "expected an array of [x, y, z]")
    points = np.zeros((len(pts_doc), 3))
    for i, p in enumerate(pts_doc):
        points[i] = _as_vec3(p, f"object_points[{i}]")

    bounds = None
    if doc.get("virtual_extension_bounds") is not None:
        raw = doc["virtual_extension_bounds"]
        if not isinstance(raw, (list, tuple)) or len(raw) != 2:
            _fail("virtual_extension_bounds", "expected [lo, hi]")
        lo, hi = float(raw[0]), float(raw[1])
        if not 0 < lo < hi:
            _fail("virtual_extension_bounds", "need 0 < lo < hi")
        bounds = (lo, hi)

    return Scene(links=tuple(links), base_link=base_link, base_pose=base_pose,
                 joints=joints, camera=camera, object_points=points,
                 virtual_extension_bounds=bounds, _joint_order=order)


def scene_to_dict(scene: Scene) -> dict:
    """Inverse of :func:`parse_scene` (module-level document schema)."""
    joints = []
    for j in scene.joints:
        d = {"kind": j.kind, "parent": j.parent, "child": j.child,
             "fixed_translation": [float(v) for v in j.fixed_translation]}
        if j.axis_in_parent is not None:
            d["axis_in_parent"] = [float(v) for v in j.axis_in_parent]
            d["axis_in_child"] = [float(v) for v in j.axis_in_child]
        if j.kind == "revolute":
            d["reference_in_parent"] = [float(v) for v in j.reference_in_parent]
            d["reference_in_child"] = [float(v) for v in j.reference_in_child]
            d["angle_limits"] = [float(j.angle_limits[0]), float(j.angle_limits[1])]
        if j.kind == "spherical":
            d["angle_limits"] = float(j.cone_half_angle)
        if j.kind == "prismatic":
            d["extension_limits"] = [float(j.extension_limits[0]), float(j.extension_limits[1])]
        if j.kind == "fixed":
            d["fixed_rotation"] = [float(v) for v in j.fixed_rotation.ravel()]
        joints.append(d)
    out = {
        "links": list(scene.links),
        "base": {"name": scene.base_link, "pose": scene.base_pose.to_dict()},
        "joints": joints,
        "camera": {
            "mount_link": scene.camera.mount_link,
            "mount_pose": scene.camera.mount_pose.to_dict(),
            "focal_length": scene.camera.focal_length,
            "image_height": scene.camera.image_height,
            "tightness": scene.camera.tightness,
        },
        "object_points": [[float(v) for v in p] for p in scene.object_points],
    }
    if scene.virtual_extension_bounds is not None:
        out["virtual_extension_bounds"] = list(scene.virtual_extension_bounds)
    return out


def with_object_points(scene: Scene, points: np.ndarray) -> Scene:
    """Copy of ``scene`` with a replaced object point set."""
    return Scene(links=scene.links, base_link=scene.base_link, base_pose=scene.base_pose,
                 joints=scene.joints, camera=scene.camera,
                 object_points=np.asarray(points, dtype=float).reshape(-1, 3),
                 virtual_extension_bounds=scene.virtual_extension_bounds,
                 _joint_order=scene._joint_order)


# ---------------------------------------------------------------------------
# virtual chains


def augment_with_virtual_chain(scene: Scene) -> AugmentedScene:
    """Attach one virtual prismatic + spherical chain per object point.

    Each chain adds exactly one unknown rotation and one normalized extension.
    Default extension bounds are [0.05 m, base-to-farthest-point distance plus
    total chain length], which always contains the camera-to-point distance;
    a scene's ``virtual_extension_bounds`` overrides them.
    """
    if len(scene.object_points) == 0:
        raise SceneError("object_points: at least one object point is required")
    if scene.virtual_extension_bounds is not None:
        tau_lo, tau_hi = scene.virtual_extension_bounds
    else:
        base_t = scene.base_pose.translation
        farthest = max(float(np.linalg.norm(p - base_t)) for p in scene.object_points)
        tau_lo = 0.05
        tau_hi = farthest + scene.total_chain_length()
    chains = tuple(
        VirtualChain(index=i, rotation_id=f"virt{i}", point=np.array(p, dtype=float),
                     tau_lo=tau_lo, tau_hi=tau_hi)
        for i, p in enumerate(scene.object_points)
    )
    return AugmentedScene(scene=scene, chains=chains)


# ---------------------------------------------------------------------------
# forward kinematics


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    k = np.asarray(axis, dtype=float)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def _frame_of(axis: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Orthonormal frame [ref, axis x ref, axis] used for joint angle bookkeeping."""
    return np.column_stack([ref, np.cross(axis, ref), axis])


def revolute_child_rotation(joint: JointSpec, parent_R: np.ndarray, angle: float) -> np.ndarray:
    Fp = _frame_of(joint.axis_in_parent, joint.reference_in_parent)
    Fc = _frame_of(joint.axis_in_child, joint.reference_in_child)
    Rz = rotation_about_axis(np.array([0.0, 0.0, 1.0]), angle)
    return parent_R @ Fp @ Rz @ Fc.T


def forward_kinematics(scene: Scene, values: JointValues,
                       limit_slack: float = 1e-9) -> dict:
    """Root-to-leaf pose composition; returns link poses plus the camera frame.

    Joint values must cover every non-fixed joint and lie within limits (a
    ``limit_slack`` widening is available for near-feasible recovered
    configurations).
    """
    values.validate(scene, limit_slack=limit_slack)
    frames = {scene.base_link: scene.base_pose}
    for joint in scene.topological_joints():
        parent = frames[joint.parent]
        t = parent.translation + parent.rotation @ joint.fixed_translation
        if joint.kind == "revolute":
            R = revolute_child_rotation(joint, parent.rotation, values.angles[joint.child])
        elif joint.kind == "prismatic":
            lo, hi = joint.extension_limits
            ext = lo + values.extensions[joint.child] * (hi - lo)
            t = t + ext * (parent.rotation @ joint.axis_in_parent)
            R = parent.rotation
        elif joint.kind == "spherical":
            R = parent.rotation @ values.sphericals[joint.child]
        else:  # fixed
            R = parent.rotation @ joint.fixed_rotation
        frames[joint.child] = Pose(R, t)
    frames[CAMERA_KEY] = frames[scene.camera.mount_link].compose(scene.camera.mount_pose)
    return frames


def camera_pose(scene: Scene, frames: dict) -> Pose:
    return frames[CAMERA_KEY]


def view_angles(scene: Scene, frames: dict) -> np.ndarray:
    """Angle between the camera Z-axis and the ray to each object point."""
    cam = frames[CAMERA_KEY]
    axis = cam.rotation[:, 2]
    out = np.zeros(len(scene.object_points))
    for i, p in enumerate(scene.object_points):
        d = p - cam.translation
        n = np.linalg.norm(d)
        if n < 1e-12:
            out[i] = 0.0
        else:
            out[i] = math.acos(float(np.clip(axis @ (d / n), -1.0, 1.0)))
    return out


def joint_values_from_frames(scene: Scene, frames: dict,
                             axis_tol: float = 1e-6,
                             limit_slack: float = 1e-9) -> JointValues:
    """Extract joint values from a kinematically consistent frame set.

    Revolute angles come from the two-argument arctangent of the world-frame
    reference vectors about the shared axis; prismatic extensions from the
    projection of the translation difference onto the axis.  Frames violating
    the joint axis constraints beyond ``axis_tol`` are rejected, as are
    extracted values outside the declared limits (plus ``limit_slack``).
    """
    angles, extensions, sphericals = {}, {}, {}
    for joint in scene.topological_joints():
        Ri, Ti = frames[joint.parent].rotation, frames[joint.parent].translation
        Rj, Tj = frames[joint.child].rotation, frames[joint.child].translation
        if joint.kind == "revolute":
            wp = Ri @ joint.axis_in_parent
            wc = Rj @ joint.axis_in_child
            if np.linalg.norm(wp - wc) > axis_tol:
                _fail(f"frames.{joint.child}", "axis constraint violated")
            rp = Ri @ joint.reference_in_parent
            rc = Rj @ joint.reference_in_child
            theta = math.atan2(float(wp @ np.cross(rp, rc)), float(rp @ rc))
            lo, hi = joint.angle_limits
            # atan2 returns in (-pi, pi]; shift into the declared window
            for cand in (theta, theta + 2 * math.pi, theta - 2 * math.pi):
                if lo - limit_slack <= cand <= hi + limit_slack:
                    theta = cand
                    break
            else:
                _fail(f"frames.{joint.child}",
                      f"extracted angle {theta:.6g} outside limits [{lo:.6g}, {hi:.6g}]")
            angles[joint.child] = theta
        elif joint.kind == "prismatic":
            if np.abs(Ri - Rj).max() > axis_tol:
                _fail(f"frames.{joint.child}", "axis constraint violated")
            d = Tj - Ti - Ri @ joint.fixed_translation
            ext = float(d @ (Ri @ joint.axis_in_parent))
            lo, hi = joint.extension_limits
            tau = (ext - lo) / (hi - lo)
            if tau < -limit_slack or tau > 1.0 + limit_slack:
                _fail(f"frames.{joint.child}",
                      f"extracted extension {ext:.6g} outside limits [{lo:.6g}, {hi:.6g}]")
            extensions[joint.child] = tau
        elif joint.kind == "spherical":
            R_rel = Ri.T @ Rj
            cosang = float(np.clip(joint.axis_in_parent @ (R_rel @ joint.axis_in_child), -1, 1))
            if math.acos(cosang) > joint.cone_half_angle + limit_slack:
                _fail(f"frames.{joint.child}", "extracted rotation outside cone limit")
            sphericals[joint.child] = R_rel
    return JointValues(angles=angles, extensions=extensions, sphericals=sphericals)
