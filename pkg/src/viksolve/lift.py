"""Rank-1 lifting of rotations and prismatic extensions, and the relaxed program.

A rotation R is lifted to the 7x7 outer product Y = v v^T with
v = [R[:,0]; R[:,1]; 1]; a normalized extension tau sliding along a world
direction d is lifted to the 8x8 outer product of
[sqrt(tau) d; sqrt(1-tau) d; sqrt(tau); sqrt(1-tau)].  Dropping the rank-1
requirement and keeping the linear structure identities plus positive
semidefiniteness yields a convex outer relaxation; every constraint of the
feasible set (joint axes, angle chords, prismatic coupling, translation
equalities, field-of-view facets) is affine in the lifted coordinates.

Symmetric blocks are scalarized in lower-triangular column-major order with
off-diagonal entries pre-multiplied by sqrt(2), so the Euclidean inner product
of two scalarized blocks equals the trace inner product of the matrices.
Blocks appear in layout registration order: physical unknown rotations in
tree order, then one rotation per virtual chain, then physical prismatic
extensions, then virtual extensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .scene import (AugmentedScene, SceneError, check_rotation,
                    forward_kinematics, rotation_about_axis, CAMERA_KEY)

SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# scaled symmetric vectorization


def tri_size(n: int) -> int:
    return n * (n + 1) // 2


@lru_cache(maxsize=None)
def tri_indices(n: int):
    """(rows, cols) of the lower triangle in column-major order."""
    rows, cols = [], []
    for j in range(n):
        for i in range(j, n):
            rows.append(i)
            cols.append(j)
    return np.array(rows), np.array(cols)


def svec_index(n: int, i: int, j: int) -> int:
    """Position of entry (i, j), i >= j, in the column-major lower triangle."""
    if i < j:
        i, j = j, i
    return j * n - (j * (j - 1)) // 2 + (i - j)


def svec(M: np.ndarray) -> np.ndarray:
    n = M.shape[0]
    rows, cols = tri_indices(n)
    v = M[rows, cols].astype(float).copy()
    v[rows != cols] *= SQRT2
    return v


def unsvec(v: np.ndarray, n: int) -> np.ndarray:
    rows, cols = tri_indices(n)
    vals = np.asarray(v, dtype=float).copy()
    vals[rows != cols] /= SQRT2
    M = np.zeros((n, n))
    M[rows, cols] = vals
    M[cols, rows] = vals
    return M


# ---------------------------------------------------------------------------
# affine expressions over the scalarized coordinates


class AffineExpr:
    """Vector-valued affine function of the global coordinates: const + sum coeff[k] x_k."""

    __slots__ = ("dim", "coeffs", "const")

    def __init__(self, dim: int, coeffs: dict | None = None, const: np.ndarray | None = None):
        self.dim = dim
        self.coeffs = coeffs if coeffs is not None else {}
        self.const = const if const is not None else np.zeros(dim)

    @staticmethod
    def constant(vec) -> "AffineExpr":
        vec = np.atleast_1d(np.asarray(vec, dtype=float))
        return AffineExpr(vec.size, {}, vec.copy())

    @staticmethod
    def zeros(dim: int) -> "AffineExpr":
        return AffineExpr(dim)

    def copy(self) -> "AffineExpr":
        return AffineExpr(self.dim, {k: v.copy() for k, v in self.coeffs.items()},
                          self.const.copy())

    def add_term(self, coord: int, vec):
        vec = np.atleast_1d(np.asarray(vec, dtype=float))
        if coord in self.coeffs:
            self.coeffs[coord] = self.coeffs[coord] + vec
        else:
            self.coeffs[coord] = vec.copy()
        return self

    def __add__(self, other: "AffineExpr") -> "AffineExpr":
        out = self.copy()
        out.const = out.const + other.const
        for k, v in other.coeffs.items():
            out.add_term(k, v)
        return out

    def __sub__(self, other: "AffineExpr") -> "AffineExpr":
        return self + other.scaled(-1.0)

    def scaled(self, s: float) -> "AffineExpr":
        return AffineExpr(self.dim, {k: s * v for k, v in self.coeffs.items()},
                          s * self.const)

    def shifted(self, vec) -> "AffineExpr":
        out = self.copy()
        out.const = out.const + np.atleast_1d(np.asarray(vec, dtype=float))
        return out

    def applied(self, M) -> "AffineExpr":
        """Left-multiply by a (p, dim) matrix."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return AffineExpr(M.shape[0], {k: M @ v for k, v in self.coeffs.items()},
                          M @ self.const)

    def dot(self, vec) -> "AffineExpr":
        """Scalar expression <vec, self>."""
        return self.applied(np.asarray(vec, dtype=float).reshape(1, -1))

    @staticmethod
    def stack(exprs) -> "AffineExpr":
        dim = sum(e.dim for e in exprs)
        out = AffineExpr(dim)
        consts, offset = [], 0
        for e in exprs:
            consts.append(e.const)
            for k, v in e.coeffs.items():
                if k not in out.coeffs:
                    out.coeffs[k] = np.zeros(dim)
                out.coeffs[k][offset:offset + e.dim] += v
            offset += e.dim
        out.const = np.concatenate(consts) if consts else np.zeros(0)
        return out

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        out = self.const.copy()
        for k, v in self.coeffs.items():
            out += v * x[k]
        return out


def exprs_to_system(exprs, n_vars: int):
    """Stack expressions into a sparse (F, g) with value F x + g."""
    rows, cols, vals, consts = [], [], [], []
    r0 = 0
    for e in exprs:
        consts.append(e.const)
        for k, v in e.coeffs.items():
            nz = np.nonzero(v)[0]
            rows.extend((r0 + nz).tolist())
            cols.extend([k] * len(nz))
            vals.extend(v[nz].tolist())
        r0 += e.dim
    F = sp.csr_matrix((vals, (rows, cols)), shape=(r0, n_vars))
    g = np.concatenate(consts) if consts else np.zeros(0)
    return F, g


# ---------------------------------------------------------------------------
# block lifts


def lift_rotation(R: np.ndarray) -> np.ndarray:
    """7x7 rank-1 lift of a rotation matrix."""
    R = np.asarray(R, dtype=float)
    check_rotation(R, "lift_rotation input")
    v = np.concatenate([R[:, 0], R[:, 1], [1.0]])
    return np.outer(v, v)


def recover_rotation(Y: np.ndarray) -> np.ndarray:
    """Linear map from a 7x7 block to the stacked rotation columns (9-vector).

    The first two columns are read from the block's last column; the third is
    the linear cross-product map.  On blocks of rank above one the output need
    not lie in SO(3).
    """
    r1 = Y[0:3, 6]
    r2 = Y[3:6, 6]
    r3 = np.array([Y[1, 5] - Y[2, 4], Y[2, 3] - Y[0, 5], Y[0, 4] - Y[1, 3]])
    return np.concatenate([r1, r2, r3])


def lift_extension(tau: float, r3: np.ndarray) -> np.ndarray:
    """8x8 rank-1 lift of a normalized extension tau sliding along unit r3."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"normalized extension {tau} outside [0, 1]")
    r3 = np.asarray(r3, dtype=float)
    if abs(np.linalg.norm(r3) - 1.0) > 1e-9:
        raise ValueError("extension direction must be unit norm")
    st, sc = math.sqrt(tau), math.sqrt(1.0 - tau)
    w = np.concatenate([st * r3, sc * r3, [st, sc]])
    return np.outer(w, w)


def rotation_structure_residual(Y: np.ndarray) -> float:
    """Largest violation of the rotation-block structure identities."""
    checks = [
        np.trace(Y[0:3, 0:3]) - 1.0,
        np.trace(Y[3:6, 3:6]) - 1.0,
        np.trace(Y[0:3, 3:6]),
        Y[6, 6] - 1.0,
    ]
    sym = np.abs(Y - Y.T).max()
    return max(max(abs(c) for c in checks), float(sym))


def extension_structure_residual(Yt: np.ndarray, rotation_third_col=None) -> float:
    """Largest violation of the extension-block identities.

    ``rotation_third_col`` is the world direction the block slides along
    (e.g. the cross-product map of the owning rotation block); when given,
    the coupling identity is included.
    """
    checks = [
        np.trace(Yt) - 2.0,
        np.trace(Yt[0:3, 0:3]) - Yt[6, 6],
        np.trace(Yt[3:6, 3:6]) - Yt[7, 7],
        np.trace(Yt[0:3, 3:6]) - Yt[6, 7],
        max(0.0, -Yt[6, 6]),
        max(0.0, Yt[6, 6] - 1.0),
        max(0.0, -Yt[6, 7]),
    ]
    res = max(abs(c) for c in checks)
    res = max(res, float(np.abs(Yt[3:6, 6] - Yt[0:3, 7]).max()))
    res = max(res, float(np.abs(Yt - Yt.T).max()))
    if rotation_third_col is not None:
        res = max(res, float(np.abs(Yt[0:3, 6] + Yt[3:6, 7]
                                    - np.asarray(rotation_third_col)).max()))
    return res


# ---------------------------------------------------------------------------
# variable layout


@dataclass(frozen=True)
class BlockSlot:
    owner: str
    kind: str       # "rotation" | "extension"
    size: int       # 7 | 8
    offset: int     # start in the global coordinate vector

    @property
    def dim(self) -> int:
        return tri_size(self.size)


class LinkRotation:
    """World rotation of a link as (block, fixed right multiplier) or a constant.

    ``R_link = R_block @ right`` for lifted links, else ``R_link = const``.
    Column and matrix-vector expressions are affine in the block coordinates.
    """

    def __init__(self, slot: BlockSlot | None, right: np.ndarray | None = None,
                 const: np.ndarray | None = None, layout: "VariableLayout" = None):
        self.slot = slot
        self.right = right if right is not None else np.eye(3)
        self.const = const
        self._layout = layout

    def compose(self, R_fixed: np.ndarray) -> "LinkRotation":
        if self.const is not None:
            return LinkRotation(None, const=self.const @ R_fixed, layout=self._layout)
        return LinkRotation(self.slot, self.right @ R_fixed, layout=self._layout)

    def times(self, v) -> AffineExpr:
        """Affine expression for R_link @ v (dim 3)."""
        v = np.asarray(v, dtype=float)
        if self.const is not None:
            return AffineExpr.constant(self.const @ v)
        w = self.right @ v
        cols = self._layout.rotation_columns(self.slot)
        out = AffineExpr.zeros(3)
        for k in range(3):
            if w[k] != 0.0:
                out = out + cols[k].scaled(w[k])
        return out

    def col(self, j: int) -> AffineExpr:
        e = np.zeros(3)
        e[j] = 1.0
        return self.times(e)

    def vec9(self) -> AffineExpr:
        return AffineExpr.stack([self.col(0), self.col(1), self.col(2)])


class VariableLayout:
    """Registry of lifted blocks plus the scalarization bookkeeping.

    Registration order fixes the global coordinate layout and the order of
    PSD segments everywhere downstream (conic assembly, golden dumps).
    """

    def __init__(self):
        self.slots: list[BlockSlot] = []
        self.rotation_slots: dict[str, BlockSlot] = {}
        self.extension_slots: dict[str, BlockSlot] = {}
        self.extension_axis_expr: dict[str, AffineExpr] = {}
        self.extension_bounds: dict[str, tuple[float, float]] = {}
        self.link_rotation: dict[str, LinkRotation] = {}
        self.camera_rotation: LinkRotation | None = None
        self.dim = 0

    def register_rotation(self, owner: str) -> BlockSlot:
        if owner in self.rotation_slots:
            raise ValueError(f"rotation block for {owner!r} already registered")
        slot = BlockSlot(owner, "rotation", 7, self.dim)
        self.slots.append(slot)
        self.rotation_slots[owner] = slot
        self.dim += slot.dim
        return slot

    def register_extension(self, owner: str, axis_expr: AffineExpr,
                           bounds: tuple[float, float]) -> BlockSlot:
        if owner in self.extension_slots:
            raise ValueError(f"extension block for {owner!r} already registered")
        slot = BlockSlot(owner, "extension", 8, self.dim)
        self.slots.append(slot)
        self.extension_slots[owner] = slot
        self.extension_axis_expr[owner] = axis_expr
        self.extension_bounds[owner] = bounds
        self.dim += slot.dim
        return slot

    # -- entry and structure expressions ------------------------------------

    def entry(self, slot: BlockSlot, i: int, j: int) -> AffineExpr:
        """Scalar expression for block entry (i, j)."""
        coord = slot.offset + svec_index(slot.size, i, j)
        coeff = 1.0 if i == j else 1.0 / SQRT2
        out = AffineExpr(1)
        out.add_term(coord, [coeff])
        return out

    def entry_sum(self, slot: BlockSlot, pairs, signs=None) -> AffineExpr:
        out = AffineExpr(1)
        for idx, (i, j) in enumerate(pairs):
            s = 1.0 if signs is None else signs[idx]
            coord = slot.offset + svec_index(slot.size, i, j)
            coeff = s * (1.0 if i == j else 1.0 / SQRT2)
            out.add_term(coord, [coeff])
        return out

    def entry_vector(self, slot: BlockSlot, pairs, signs=None) -> AffineExpr:
        """Dim-len(pairs) expression of the listed entries (optionally signed)."""
        out = AffineExpr(len(pairs))
        for r, (i, j) in enumerate(pairs):
            s = 1.0 if signs is None else signs[r]
            coord = slot.offset + svec_index(slot.size, i, j)
            vec = np.zeros(len(pairs))
            vec[r] = s * (1.0 if i == j else 1.0 / SQRT2)
            out.add_term(coord, vec)
        return out

    def rotation_columns(self, slot: BlockSlot):
        """Affine expressions for the three recovered rotation columns."""
        col1 = self.entry_vector(slot, [(6, 0), (6, 1), (6, 2)])
        col2 = self.entry_vector(slot, [(6, 3), (6, 4), (6, 5)])
        # third column via the cross-product map: signed entry pairs
        col3 = AffineExpr(3)
        for r, (plus, minus) in enumerate([((1, 5), (2, 4)), ((2, 3), (0, 5)), ((0, 4), (1, 3))]):
            for pair, s in ((plus, 1.0), (minus, -1.0)):
                coord = slot.offset + svec_index(slot.size, *pair)
                vec = np.zeros(3)
                vec[r] = s / SQRT2
                col3.add_term(coord, vec)
        return col1, col2, col3

    def extension_top(self, slot: BlockSlot) -> AffineExpr:
        """Expression for block column entries [0:3, 6] (the tau * direction part)."""
        return self.entry_vector(slot, [(6, 0), (6, 1), (6, 2)])

    # -- packing -------------------------------------------------------------

    def pack(self, blocks: dict) -> np.ndarray:
        x = np.zeros(self.dim)
        for slot in self.slots:
            x[slot.offset:slot.offset + slot.dim] = svec(blocks[(slot.kind, slot.owner)])
        return x

    def unpack(self, x: np.ndarray) -> dict:
        out = {}
        for slot in self.slots:
            out[(slot.kind, slot.owner)] = unsvec(x[slot.offset:slot.offset + slot.dim],
                                                  slot.size)
        return out


def build_layout(aug: AugmentedScene) -> VariableLayout:
    """Register blocks and link-rotation bookkeeping for an augmented scene.

    Rotation blocks: one per revolute/spherical joint child (tree order), then
    one per virtual chain.  Fixed joints compose their rotation into the
    parent's expression; prismatic children alias the parent's block.
    Extension blocks: physical prismatic joints (tree order), then virtual
    chains.
    """
    scene = aug.scene
    layout = VariableLayout()
    layout.link_rotation[scene.base_link] = LinkRotation(
        None, const=scene.base_pose.rotation, layout=layout)

    prismatic = []
    for joint in scene.topological_joints():
        parent_lr = layout.link_rotation[joint.parent]
        if joint.kind in ("revolute", "spherical"):
            slot = layout.register_rotation(joint.child)
            layout.link_rotation[joint.child] = LinkRotation(slot, layout=layout)
        elif joint.kind == "fixed":
            layout.link_rotation[joint.child] = parent_lr.compose(joint.fixed_rotation)
        elif joint.kind == "prismatic":
            layout.link_rotation[joint.child] = parent_lr
            prismatic.append(joint)

    for chain in aug.chains:
        slot = layout.register_rotation(chain.rotation_id)
        layout.link_rotation[chain.rotation_id] = LinkRotation(slot, layout=layout)

    for joint in prismatic:
        axis_expr = layout.link_rotation[joint.parent].times(joint.axis_in_parent)
        layout.register_extension(joint.child, axis_expr, joint.extension_limits)
    for chain in aug.chains:
        axis_expr = layout.link_rotation[chain.rotation_id].col(2)
        layout.register_extension(chain.rotation_id, axis_expr,
                                  (chain.tau_lo, chain.tau_hi))

    mount = layout.link_rotation[scene.camera.mount_link]
    layout.camera_rotation = mount.compose(scene.camera.mount_pose.rotation)
    return layout


# ---------------------------------------------------------------------------
# constraint builders


def build_structure_constraints(layout: VariableLayout):
    """Structure identities of every block, in layout order.

    Per rotation block: two unit traces, one zero cross-trace, corner = 1.
    Per extension block: total trace 2, block traces tied to the corner
    entries, the two symmetric column identities, the cross-trace tie, the
    coupling to the owner's direction, plus the scalar bounds on (6, 6) and
    (6, 7).
    """
    equalities, inequalities = [], []
    for slot in layout.slots:
        if slot.kind == "rotation":
            equalities.append(layout.entry_sum(slot, [(0, 0), (1, 1), (2, 2)]).shifted([-1.0]))
            equalities.append(layout.entry_sum(slot, [(3, 3), (4, 4), (5, 5)]).shifted([-1.0]))
            equalities.append(layout.entry_sum(slot, [(3, 0), (4, 1), (5, 2)]))
            equalities.append(layout.entry(slot, 6, 6).shifted([-1.0]))
        else:
            diag = [(i, i) for i in range(8)]
            equalities.append(layout.entry_sum(slot, diag).shifted([-2.0]))
            equalities.append(layout.entry_sum(slot, [(0, 0), (1, 1), (2, 2), (6, 6)],
                                               [1, 1, 1, -1]))
            equalities.append(layout.entry_sum(slot, [(3, 3), (4, 4), (5, 5), (7, 7)],
                                               [1, 1, 1, -1]))
            equalities.append(layout.entry_vector(slot, [(6, 3), (6, 4), (6, 5)])
                              - layout.entry_vector(slot, [(7, 0), (7, 1), (7, 2)]))
            equalities.append(layout.entry_sum(slot, [(3, 0), (4, 1), (5, 2), (7, 6)],
                                               [1, 1, 1, -1]))
            coupling = (layout.entry_vector(slot, [(6, 0), (6, 1), (6, 2)])
                        + layout.entry_vector(slot, [(7, 3), (7, 4), (7, 5)])
                        - layout.extension_axis_expr[slot.owner])
            equalities.append(coupling)
            inequalities.append(layout.entry(slot, 6, 6).scaled(-1.0))
            inequalities.append(layout.entry(slot, 6, 6).shifted([-1.0]))
            inequalities.append(layout.entry(slot, 7, 6).scaled(-1.0))
    return equalities, inequalities


@dataclass(frozen=True)
class FacetSet:
    """Outer polyhedral approximation of a Euclidean ball of radius ``radius``.

    Halfspaces {d : n_k . d <= radius} tangent at radius * n_k; the
    intersection contains the ball.  ``cover_angle`` is the largest angular
    distance from any direction to its nearest facet normal (dense 1-degree
    sphere sampling) and ``circumscribed_radius = radius / cos(cover_angle)``
    bounds the polyhedron's radial extent.
    """

    normals: np.ndarray
    radius: float
    cover_angle: float

    @property
    def circumscribed_radius(self) -> float:
        return self.radius / math.cos(self.cover_angle)

    def outer_angle(self, base_angle_of_chord=None) -> float:
        """Angle bound corresponding to the circumscribed chord (capped at pi)."""
        chord = min(2.0, self.circumscribed_radius)
        return 2.0 * math.asin(chord / 2.0)


@lru_cache(maxsize=None)
def _fibonacci_directions(count: int):
    golden = math.pi * (3.0 - math.sqrt(5.0))
    k = np.arange(count)
    z = 1.0 - 2.0 * (k + 0.5) / count
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = golden * k
    dirs = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    dirs.setflags(write=False)
    return dirs


@lru_cache(maxsize=None)
def _sphere_grid_1deg():
    th = np.deg2rad(np.arange(0, 181))
    ph = np.deg2rad(np.arange(0, 360))
    T, P = np.meshgrid(th, ph, indexing="ij")
    st = np.sin(T)
    grid = np.column_stack([(st * np.cos(P)).ravel(), (st * np.sin(P)).ravel(),
                            np.cos(T).ravel()])
    grid.setflags(write=False)
    return grid


@lru_cache(maxsize=None)
def _cover_angle(count: int, mode: str) -> float:
    normals = _facet_normals(count, mode)
    grid = _sphere_grid_1deg()
    best = np.max(grid @ normals.T, axis=1)
    return float(np.arccos(np.clip(best.min(), -1.0, 1.0)))


@lru_cache(maxsize=None)
def _facet_normals(count: int, mode: str):
    if mode == "axes":
        if count != 6:
            raise ValueError("axis-aligned facet mode requires count == 6")
        normals = np.vstack([np.eye(3), -np.eye(3)])
        normals.setflags(write=False)
        return normals
    if mode != "fibonacci":
        raise ValueError(f"unknown facet mode {mode!r}")
    return _fibonacci_directions(count)


def ball_facets(radius: float, count: int, mode: str = "fibonacci") -> FacetSet:
    """Tangent halfspaces outer-approximating the ball of the given radius."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if count < 4:
        raise ValueError("at least 4 facets are required")
    normals = _facet_normals(count, mode)
    return FacetSet(normals=normals, radius=float(radius),
                    cover_angle=_cover_angle(count, mode))


def chord(angle: float) -> float:
    """Chord length subtended by ``angle`` between unit vectors."""
    return math.sqrt(max(0.0, 2.0 - 2.0 * math.cos(angle)))


def _facet_rows(facets: FacetSet, d_expr: AffineExpr):
    rows = []
    for n in facets.normals:
        rows.append(d_expr.dot(n).shifted([-facets.radius]))
    return rows


def build_joint_constraints(aug: AugmentedScene, layout: VariableLayout,
                            facets: int = 64):
    """Axis equalities and angle-chord facet rows for the physical joints.

    Revolute joints emit three axis rows and, when the half-range is below pi,
    facet rows bounding the chord between the mid-angle-corrected parent
    reference and the child reference.  Spherical joints emit cone facet rows
    on their designated axes.  Prismatic joints are handled by block aliasing
    and emit nothing here.
    """
    equalities, inequalities = [], []
    for joint in aug.scene.topological_joints():
        if joint.kind in ("prismatic", "fixed"):
            continue
        lr_p = layout.link_rotation[joint.parent]
        lr_c = layout.link_rotation[joint.child]
        if joint.kind == "revolute":
            equalities.append(lr_p.times(joint.axis_in_parent)
                              - lr_c.times(joint.axis_in_child))
            delta = joint.half_range
            if delta < math.pi:
                radius = 2.0 * math.sin(delta / 2.0)
                ref_mid = rotation_about_axis(joint.axis_in_parent, joint.mid_angle) \
                    @ joint.reference_in_parent
                d = lr_p.times(ref_mid) - lr_c.times(joint.reference_in_child)
                inequalities.extend(_facet_rows(ball_facets(radius, facets), d))
        else:  # spherical
            if joint.cone_half_angle < math.pi:
                radius = 2.0 * math.sin(joint.cone_half_angle / 2.0)
                d = lr_p.times(joint.axis_in_parent) - lr_c.times(joint.axis_in_child)
                inequalities.extend(_facet_rows(ball_facets(radius, facets), d))
    return equalities, inequalities


def translation_expression(aug: AugmentedScene, layout: VariableLayout):
    """Affine translation expressions per link plus the virtual-chain pins.

    Returns ``(translations, pin_equalities)`` where translations maps link
    names (and the camera key) to dim-3 expressions, chained root-to-leaf;
    across prismatic joints the extension enters through the lifted block's
    (0:3, 6) column.  Each virtual chain pins its expression at the known
    object point, producing three equality rows per point.
    """
    scene = aug.scene
    translations = {scene.base_link: AffineExpr.constant(scene.base_pose.translation)}
    for joint in scene.topological_joints():
        t = translations[joint.parent] + layout.link_rotation[joint.parent].times(
            joint.fixed_translation)
        if joint.kind == "prismatic":
            lo, hi = joint.extension_limits
            axis_expr = layout.extension_axis_expr[joint.child]
            top = layout.extension_top(layout.extension_slots[joint.child])
            t = t + axis_expr.scaled(lo) + top.scaled(hi - lo)
        translations[joint.child] = t

    translations[CAMERA_KEY] = (translations[scene.camera.mount_link]
                                + layout.link_rotation[scene.camera.mount_link].times(
                                    scene.camera.mount_pose.translation))

    pins = []
    for chain in aug.chains:
        axis_expr = layout.extension_axis_expr[chain.rotation_id]
        top = layout.extension_top(layout.extension_slots[chain.rotation_id])
        expr = (translations[CAMERA_KEY] + axis_expr.scaled(chain.tau_lo)
                + top.scaled(chain.tau_hi - chain.tau_lo)).shifted(-chain.point)
        pins.append(expr)
    return translations, pins


def build_fov_constraints(aug: AugmentedScene, layout: VariableLayout,
                          alpha: float, facets: int = 64, shrink: float = 1.0):
    """Field-of-view facet rows: each chain's z-axis near the camera z-axis.

    The chord between the two unit columns is bounded by
    ``shrink * sqrt(2 - 2 cos(alpha))``; with shrink = 1 the polyhedron is an
    outer approximation of the exact cone constraint.
    """
    if not 0.0 < alpha < math.pi:
        raise ValueError("aperture must be in (0, pi)")
    if not 0.0 < shrink <= 1.0:
        raise ValueError("shrink must be in (0, 1]")
    radius = shrink * chord(alpha)
    facet_set = ball_facets(radius, facets)
    cam_col = layout.camera_rotation.col(2)
    rows = []
    for chain in aug.chains:
        d = layout.link_rotation[chain.rotation_id].col(2) - cam_col
        rows.extend(_facet_rows(facet_set, d))
    return rows, facet_set


@dataclass
class LiftedProgram:
    """Assembled convex relaxation: blocks, affine rows, translation maps."""

    layout: VariableLayout
    equalities: list
    inequalities: list
    translations: dict
    aperture: float
    shrink: float
    facet_count: int
    fov_facets: FacetSet
    aug: AugmentedScene
    _eq_sys: tuple = field(default=None, repr=False)
    _ineq_sys: tuple = field(default=None, repr=False)

    def equality_system(self):
        if self._eq_sys is None:
            self._eq_sys = exprs_to_system(self.equalities, self.layout.dim)
        return self._eq_sys

    def inequality_system(self):
        if self._ineq_sys is None:
            self._ineq_sys = exprs_to_system(self.inequalities, self.layout.dim)
        return self._ineq_sys

    def residuals(self, x: np.ndarray):
        """(max |equality row|, max positive inequality row) at coordinates x."""
        F, g = self.equality_system()
        eq = np.abs(F @ x + g).max() if F.shape[0] else 0.0
        F, g = self.inequality_system()
        ineq = (F @ x + g).max() if F.shape[0] else 0.0
        return float(eq), float(max(0.0, ineq))

    @property
    def fov_outer_angle(self) -> float:
        """View-angle bound actually certified by the facet rows."""
        chord_out = min(2.0, self.fov_facets.circumscribed_radius / max(self.shrink, 1e-12))
        return 2.0 * math.asin(chord_out / 2.0)


def assemble_relaxation(aug: AugmentedScene, alpha: float | None = None,
                        facets: int = 64, shrink: float = 1.0) -> LiftedProgram:
    """Assemble the full relaxed feasible set for an augmented scene.

    Row order is deterministic: structure identities (layout order), joint
    rows (tree order), translation pins (chain order), field-of-view facets
    (chain order).
    """
    from .scene import camera_aperture
    if alpha is None:
        alpha = camera_aperture(aug.scene.camera)
    layout = build_layout(aug)
    eq_s, ineq_s = build_structure_constraints(layout)
    eq_j, ineq_j = build_joint_constraints(aug, layout, facets)
    translations, pins = translation_expression(aug, layout)
    fov_rows, facet_set = build_fov_constraints(aug, layout, alpha, facets, shrink)
    return LiftedProgram(
        layout=layout,
        equalities=eq_s + eq_j + pins,
        inequalities=ineq_s + ineq_j + fov_rows,
        translations=translations,
        aperture=alpha,
        shrink=shrink,
        facet_count=facets,
        fov_facets=facet_set,
        aug=aug,
    )


# ---------------------------------------------------------------------------
# lifting full configurations (oracle-side helper)


def complete_rotation_from_z(z: np.ndarray) -> np.ndarray:
    """Deterministic rotation whose third column is the given unit vector."""
    z = np.asarray(z, dtype=float)
    helper = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def lift_scene_configuration(aug: AugmentedScene, layout: VariableLayout,
                             values, limit_slack: float = 1e-9) -> np.ndarray:
    """Exact rank-1 coordinates of a physical configuration.

    Physical blocks are lifted from forward kinematics; each virtual chain's
    rotation is completed from the camera-to-point unit ray and its extension
    from the camera-to-point distance.  Raises if a point's distance falls
    outside the chain's extension bounds.
    """
    scene = aug.scene
    frames = forward_kinematics(scene, values, limit_slack=limit_slack)
    cam = frames[CAMERA_KEY]
    blocks = {}
    chain_by_id = {c.rotation_id: c for c in aug.chains}
    for slot in layout.slots:
        if slot.kind == "rotation":
            if slot.owner in chain_by_id:
                c = chain_by_id[slot.owner]
                d = c.point - cam.translation
                dist = float(np.linalg.norm(d))
                if not c.tau_lo <= dist <= c.tau_hi:
                    raise SceneError(f"point {c.index} at distance {dist:.4g} outside "
                                     f"virtual extension bounds [{c.tau_lo}, {c.tau_hi}]")
                blocks[(slot.kind, slot.owner)] = lift_rotation(
                    complete_rotation_from_z(d / dist))
            else:
                blocks[(slot.kind, slot.owner)] = lift_rotation(frames[slot.owner].rotation)
        else:
            if slot.owner in chain_by_id:
                c = chain_by_id[slot.owner]
                d = c.point - cam.translation
                dist = float(np.linalg.norm(d))
                tau = (dist - c.tau_lo) / (c.tau_hi - c.tau_lo)
                blocks[(slot.kind, slot.owner)] = lift_extension(tau, d / dist)
            else:
                joint = scene.joint_for_child(slot.owner)
                direction = frames[joint.parent].rotation @ joint.axis_in_parent
                blocks[(slot.kind, slot.owner)] = lift_extension(
                    values.extensions[slot.owner], direction)
    return layout.pack(blocks)
