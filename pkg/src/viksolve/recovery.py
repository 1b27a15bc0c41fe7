"""Recover physical configurations from near-rank-1 states and validate them.

Rotations are read through the linear recovery map, projected onto SO(3) by
the polar factor, and chained into translations root-to-leaf; prismatic
extensions are read from the lifted block's (6, 6) entry.  Validation reports
eigenvalue gaps, SO(3) deviations, view angles, joint-limit margins, and
kinematic residuals; it reports rather than throws, so downstream tooling
decides pass/fail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lift import LiftedProgram, recover_rotation
from .scene import (AugmentedScene, CAMERA_KEY, JointValues, Pose, SceneError,
                    forward_kinematics, view_angles)

TRUST_RADIUS = 0.5


class RecoveryError(RuntimeError):
    """Raised when a state is too far from rank-1 to recover a configuration."""


def project_so3(M: np.ndarray) -> np.ndarray:
    """Frobenius-nearest rotation: polar factor with determinant forced to +1."""
    M = np.asarray(M, dtype=float)
    U, sigma, Vt = np.linalg.svd(M)
    if sigma[1] < 1e-12:
        raise ValueError("matrix is rank deficient; nearest rotation undefined")
    d = np.sign(np.linalg.det(U @ Vt))
    if d == 0:
        d = 1.0
    flip = np.diag([1.0, 1.0, d])
    return U @ flip @ Vt


def _block_rotations(state, aug: AugmentedScene, program: LiftedProgram,
                     trust: float = TRUST_RADIUS):
    """Raw and projected rotations per rotation block, plus SO(3) deviations."""
    raw, projected, deviation = {}, {}, {}
    for slot in program.layout.slots:
        if slot.kind != "rotation":
            continue
        g = recover_rotation(state.blocks[(slot.kind, slot.owner)])
        M = np.column_stack([g[0:3], g[3:6], g[6:9]])
        R = project_so3(M)
        dev = float(np.linalg.norm(M - R))
        if dev > trust:
            raise RecoveryError(f"recovery outside trust region: block "
                                f"{slot.owner!r} is {dev:.3f} from SO(3)")
        raw[slot.owner], projected[slot.owner], deviation[slot.owner] = M, R, dev
    return raw, projected, deviation


def _tau_from_block(Yt: np.ndarray) -> float:
    return float(np.clip(Yt[6, 6], 0.0, 1.0))


def recover_configuration(state, aug: AugmentedScene, program: LiftedProgram,
                          trust: float = TRUST_RADIUS):
    """Extract joint values and frames from a solved state.

    Link rotations come from the projected blocks composed through any fixed
    joints; translations are chained root-to-leaf with the projected
    rotations, prismatic extensions read from the extension blocks.  Joint
    values are then extracted from the frames with a tolerance widened for
    near-rank-1 inputs, and joint limits widened by each joint's polyhedral
    outer slack.
    """
    scene = aug.scene
    _, projected, _ = _block_rotations(state, aug, program, trust)

    frames = {scene.base_link: scene.base_pose}
    for joint in scene.topological_joints():
        parent = frames[joint.parent]
        t = parent.translation + parent.rotation @ joint.fixed_translation
        if joint.kind in ("revolute", "spherical"):
            R = projected[joint.child]
        elif joint.kind == "fixed":
            R = parent.rotation @ joint.fixed_rotation
        else:  # prismatic
            R = parent.rotation
            lo, hi = joint.extension_limits
            tau = _tau_from_block(state.blocks[("extension", joint.child)])
            t = t + (lo + tau * (hi - lo)) * (parent.rotation @ joint.axis_in_parent)
        frames[joint.child] = Pose(R, t)
    frames[CAMERA_KEY] = frames[scene.camera.mount_link].compose(scene.camera.mount_pose)

    from .scene import joint_values_from_frames
    slack = _outer_limit_slack(program)
    values = joint_values_from_frames(scene, frames, axis_tol=1e-3, limit_slack=slack)
    return values, frames


def _outer_limit_slack(program: LiftedProgram) -> float:
    """Angle slack certified by the facet outer approximation of joint limits."""
    cover = program.fov_facets.cover_angle
    # chord r inflates to at most r / cos(cover); the worst-case inflation of
    # the recovered angle over all half-ranges is bounded by the cover angle
    return cover + 1e-6


@dataclass
class ValidationReport:
    """Per-solve quality metrics; serialized for the CLI and bench harness."""

    e2: dict = field(default_factory=dict)
    e2_max: float = math.nan
    so3_dev: dict = field(default_factory=dict)
    so3_dev_max: float = math.nan
    fov_angles_rad: list = field(default_factory=list)
    alpha: float = math.nan
    alpha_out: float = math.nan
    fov_ok: bool = False
    fov_ok_strict: bool = False
    joint_margins: dict = field(default_factory=dict)
    limit_ok: bool = False
    kinematic_residual: float = math.nan
    translation_consistency: float = math.nan
    cost_recomputed: float = math.nan
    delta_f_bar: float = math.nan
    gaps_closed: bool = False
    termination: str = ""
    recovery_error: str | None = None

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["e2"] = {k: float(v) for k, v in self.e2.items()}
        out["so3_dev"] = {k: float(v) for k, v in self.so3_dev.items()}
        out["joint_margins"] = {k: float(v) for k, v in self.joint_margins.items()}
        out["fov_angles_rad"] = [float(v) for v in self.fov_angles_rad]
        return out


def second_eigenvalue(S: np.ndarray) -> float:
    w = np.linalg.eigvalsh(np.asarray(S, dtype=float))
    return float(w[-2])


def validate(configuration, aug: AugmentedScene, state, cost, program: LiftedProgram,
             solution=None, eps1: float = 1e-3) -> ValidationReport:
    """Compute the full validation report for a solved state.

    Works from the recovered configuration's forward kinematics; never raises
    on bad geometry.  ``configuration`` may be None (failed recovery), in
    which case only the block-side metrics are filled in.
    """
    report = ValidationReport()
    scene = aug.scene
    layout = program.layout

    for slot in layout.slots:
        S = state.blocks.get((slot.kind, slot.owner))
        if S is None:
            continue
        report.e2[f"{slot.kind}:{slot.owner}"] = second_eigenvalue(S)
    if report.e2:
        report.e2_max = max(report.e2.values())

    try:
        _, _, deviations = _block_rotations(state, aug, program, trust=math.inf)
        report.so3_dev = deviations
        report.so3_dev_max = max(deviations.values()) if deviations else math.nan
    except Exception:
        pass

    gaps = []
    for slot in layout.slots:
        S = state.blocks.get((slot.kind, slot.owner))
        if S is None:
            continue
        target = 3.0 if slot.kind == "rotation" else 2.0
        w = np.linalg.eigvalsh(S)
        gaps.append(target - float(w[-1]))
    report.gaps_closed = bool(gaps) and max(gaps) <= eps1

    report.alpha = program.aperture
    report.alpha_out = program.fov_outer_angle
    if solution is not None:
        report.termination = solution.termination
        report.delta_f_bar = solution.delta_f_bar
        report.recovery_error = solution.recovery_error

    if configuration is None:
        return report

    try:
        slack = _outer_limit_slack(program)
        frames = forward_kinematics(scene, configuration, limit_slack=slack)
    except SceneError as exc:
        report.recovery_error = str(exc)
        return report

    if len(scene.object_points):
        angles = view_angles(scene, frames)
        report.fov_angles_rad = [float(a) for a in angles]
        report.fov_ok = bool(np.all(angles <= report.alpha_out + 1e-9))
        report.fov_ok_strict = bool(np.all(angles <= report.alpha + 1e-9))
    else:
        report.fov_ok = True
        report.fov_ok_strict = True

    margins = {}
    ok = True
    for joint in scene.joints:
        if joint.kind == "revolute":
            lo, hi = joint.angle_limits
            theta = configuration.angles[joint.child]
            margin = min(theta - lo, hi - theta)
        elif joint.kind == "prismatic":
            tau = configuration.extensions[joint.child]
            margin = min(tau, 1.0 - tau)
        elif joint.kind == "spherical":
            R = configuration.sphericals[joint.child]
            ang = math.acos(float(np.clip(
                joint.axis_in_parent @ (R @ joint.axis_in_child), -1, 1)))
            margin = joint.cone_half_angle - ang
        else:
            continue
        margins[joint.child] = float(margin)
        ok = ok and margin >= -1e-9
    report.joint_margins = margins
    report.limit_ok = ok

    # per-joint axis-consistency of the recovered frames
    residual = 0.0
    for joint in scene.joints:
        Ri = frames[joint.parent].rotation
        Rj = frames[joint.child].rotation
        if joint.kind == "revolute":
            residual = max(residual, float(np.linalg.norm(
                Ri @ joint.axis_in_parent - Rj @ joint.axis_in_child)))
        elif joint.kind == "prismatic":
            residual = max(residual, float(np.abs(Ri - Rj).max()))
    report.kinematic_residual = residual

    # recovered FK translations vs the lifted translation expressions
    diff = 0.0
    for link, expr in program.translations.items():
        diff = max(diff, float(np.linalg.norm(expr.evaluate(state.x)
                                              - frames[link].translation)))
    report.translation_consistency = diff

    from .costs import QuadraticCost
    if isinstance(cost, QuadraticCost):
        try:
            from .lift import lift_scene_configuration
            x_cfg = lift_scene_configuration(aug, layout, configuration,
                                             limit_slack=slack)
            report.cost_recomputed = cost.value(x_cfg)
        except Exception:
            report.cost_recomputed = math.nan
    return report
