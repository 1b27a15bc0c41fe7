"""Standard-form conic problems and a first-order operator-splitting solver.

Problems are expressed as ``min c.x  s.t.  A x + s = b,  s in K`` where K is
an ordered product of zero, nonnegative, second-order, and small PSD cones
(7x7 / 8x8 blocks in the scaled lower-triangular vectorization of
:mod:`viksolve.lift`).

The built-in reference solver runs the homogeneous self-dual embedding with
alternating affine projections (one cached factorization of I + A'A) and exact
cone projections, over-relaxed with parameter 1.5.  It is fully deterministic:
fixed input data yields a fixed iterate sequence.  Infeasibility is reported
through normalized certificates.  External solvers can be plugged behind the
same interface (see :mod:`viksolve.backends`).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .costs import QuadraticCost
from .lift import LiftedProgram, exprs_to_system, tri_indices, tri_size

STATUS_OPTIMAL = "optimal"
STATUS_PRIMAL_INFEASIBLE = "primal_infeasible"
STATUS_DUAL_INFEASIBLE = "dual_infeasible"
STATUS_MAX_ITERS = "max_iters"


@dataclass(frozen=True)
class ConeSeg:
    kind: str                  # "zero" | "nonneg" | "soc" | "psd"
    dim: int                   # rows occupied in b
    order: int | None = None   # matrix size for psd segments


@dataclass
class ConicProblem:
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    cones: list

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.b.size

    def validate(self):
        total = sum(seg.dim for seg in self.cones)
        if total != self.m:
            raise ValueError(f"cone dims sum to {total}, expected {self.m}")
        for seg in self.cones:
            if seg.kind == "psd":
                if seg.order not in (7, 8) or seg.dim != tri_size(seg.order):
                    raise ValueError("psd segments must be 7x7 or 8x8 triangles")
        return self


@dataclass
class SolverSettings:
    """Reference-solver settings.

    ``eps_target`` is the stopping tolerance; a run that plateaus below
    ``eps_acceptance`` (no 10% improvement over ``stall_window`` iterations)
    is also accepted as optimal.  ``deterministic`` is informational: the
    solver has no nondeterministic paths.
    """

    eps_target: float = 1e-8
    eps_acceptance: float = 1e-6
    max_iters: int = 100_000
    eps_infeasible: float = 1e-7
    deterministic: bool = True
    relaxation: float = 1.5
    check_interval: int = 25
    stall_window: int = 2_000
    ruiz_iters: int = 10
    time_limit: float | None = None

    def __post_init__(self):
        if min(self.eps_target, self.eps_acceptance, self.eps_infeasible) <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SolveResult:
    status: str
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    objective: float
    primal_res: float
    dual_res: float
    gap: float
    iterations: int
    solve_time: float
    certificate: np.ndarray | None = None


# ---------------------------------------------------------------------------
# epigraph reformulation


def to_conic(program: LiftedProgram, cost: QuadraticCost | None = None,
             extra_inequalities=()) -> ConicProblem:
    """Translate a lifted program plus quadratic cost into standard conic form.

    Variables are the scalarized block coordinates followed by one epigraph
    scalar per cost term; each squared term is bounded by its epigraph scalar
    through a second-order-cone group.  Row order: equalities (zero cone),
    scalar inequalities (nonnegative cone, with ``extra_inequalities``
    appended), SOC groups in cost-term order, then one PSD segment per block
    in layout order.
    """
    layout = program.layout
    terms = cost.terms if cost is not None else []
    n = layout.dim + len(terms)

    blocks_A, blocks_b, cones = [], [], []

    eq_F, eq_g = exprs_to_system(program.equalities, n)
    if eq_F.shape[0]:
        blocks_A.append(eq_F)
        blocks_b.append(-eq_g)
        cones.append(ConeSeg("zero", eq_F.shape[0]))

    ineq_rows = list(program.inequalities) + list(extra_inequalities)
    ineq_F, ineq_g = exprs_to_system(ineq_rows, n)
    if ineq_F.shape[0]:
        blocks_A.append(ineq_F)
        blocks_b.append(-ineq_g)
        cones.append(ConeSeg("nonneg", ineq_F.shape[0]))

    for j, (_, expr) in enumerate(terms):
        t_col = layout.dim + j
        d = expr.dim
        F, g = exprs_to_system([expr], n)
        head = sp.csr_matrix(([-1.0], ([0], [t_col])), shape=(1, n))
        tail = sp.csr_matrix(([-1.0], ([0], [t_col])), shape=(1, n))
        blocks_A.append(sp.vstack([head, (-2.0) * F, tail], format="csr"))
        blocks_b.append(np.concatenate([[1.0], 2.0 * g, [-1.0]]))
        cones.append(ConeSeg("soc", d + 2))

    for slot in layout.slots:
        rows = np.arange(slot.dim)
        cols = slot.offset + rows
        blocks_A.append(sp.csr_matrix((-np.ones(slot.dim), (rows, cols)),
                                      shape=(slot.dim, n)))
        blocks_b.append(np.zeros(slot.dim))
        cones.append(ConeSeg("psd", slot.dim, slot.size))

    A = sp.vstack(blocks_A, format="csr") if blocks_A else sp.csr_matrix((0, n))
    b = np.concatenate(blocks_b) if blocks_b else np.zeros(0)
    c = np.zeros(n)
    for j, (w, _) in enumerate(terms):
        c[layout.dim + j] = w
    return ConicProblem(c=c, A=A, b=b, cones=cones).validate()


def dump_problem(problem: ConicProblem) -> str:
    """Canonical text export (coordinate triplets; floats via repr)."""
    A = problem.A.tocoo()
    order = np.lexsort((A.col, A.row))
    lines = ["viksolve-conic v1", f"vars {problem.n}"]
    for seg in problem.cones:
        if seg.kind == "psd":
            lines.append(f"cone psd {seg.order} {seg.dim}")
        else:
            lines.append(f"cone {seg.kind} {seg.dim}")
    nz = np.nonzero(problem.c)[0]
    lines.append(f"c {problem.n}")
    lines.extend(f"{i} {problem.c[i]!r}" for i in nz)
    lines.append(f"A {A.nnz}")
    lines.extend(f"{A.row[k]} {A.col[k]} {A.data[k]!r}" for k in order)
    nzb = np.nonzero(problem.b)[0]
    lines.append(f"b {problem.m}")
    lines.extend(f"{i} {problem.b[i]!r}" for i in nzb)
    lines.append("end")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# cone projections


def project_psd(S: np.ndarray) -> np.ndarray:
    """Frobenius-nearest positive semidefinite matrix (symmetric input)."""
    S = np.asarray(S, dtype=float)
    if np.abs(S - S.T).max() > 1e-9:
        raise ValueError("project_psd requires a symmetric matrix")
    S = 0.5 * (S + S.T)
    w, Q = np.linalg.eigh(S)
    w = np.maximum(w, 0.0)
    return (Q * w) @ Q.T


class _ConeMeta:
    """Precomputed index structure for fast product-cone projections."""

    def __init__(self, cones):
        self.cones = cones
        self.m = sum(seg.dim for seg in cones)
        zero_idx, nonneg_idx, socs = [], [], []
        psd_groups = {}
        offset = 0
        for seg in cones:
            sl = np.arange(offset, offset + seg.dim)
            if seg.kind == "zero":
                zero_idx.append(sl)
            elif seg.kind == "nonneg":
                nonneg_idx.append(sl)
            elif seg.kind == "soc":
                socs.append((offset, seg.dim))
            elif seg.kind == "psd":
                psd_groups.setdefault(seg.order, []).append(offset)
            else:
                raise ValueError(f"unknown cone kind {seg.kind!r}")
            offset += seg.dim
        self.zero_idx = np.concatenate(zero_idx) if zero_idx else np.zeros(0, dtype=int)
        self.nonneg_idx = (np.concatenate(nonneg_idx) if nonneg_idx
                           else np.zeros(0, dtype=int))
        self.socs = socs
        self.psd = []
        for order, starts in psd_groups.items():
            tri = tri_size(order)
            idx = np.asarray(starts)[:, None] + np.arange(tri)[None, :]
            ti, tj = tri_indices(order)
            to_mat = np.where(ti == tj, 1.0, 1.0 / math.sqrt(2.0))
            from_mat = np.where(ti == tj, 1.0, math.sqrt(2.0))
            self.psd.append((order, idx, ti, tj, to_mat, from_mat))

    def _project_psd_part(self, z):
        for order, idx, ti, tj, to_mat, from_mat in self.psd:
            V = z[idx] * to_mat
            M = np.zeros((idx.shape[0], order, order))
            M[:, ti, tj] = V
            M[:, tj, ti] = V
            w, Q = np.linalg.eigh(M)
            np.maximum(w, 0.0, out=w)
            M = (Q * w[:, None, :]) @ Q.transpose(0, 2, 1)
            z[idx] = M[:, ti, tj] * from_mat

    def _project_socs(self, z):
        for offset, dim in self.socs:
            t = z[offset]
            rest = z[offset + 1:offset + dim]
            nr = float(np.linalg.norm(rest))
            if nr <= t:
                continue
            if nr <= -t:
                z[offset:offset + dim] = 0.0
            else:
                coef = 0.5 * (t + nr)
                z[offset] = coef
                z[offset + 1:offset + dim] = rest * (coef / nr)

    def project(self, z):
        """Projection onto K (zero part set to 0)."""
        z = np.array(z, dtype=float)
        z[self.zero_idx] = 0.0
        z[self.nonneg_idx] = np.maximum(z[self.nonneg_idx], 0.0)
        self._project_socs(z)
        self._project_psd_part(z)
        return z

    def project_dual(self, z):
        """Projection onto K* (zero part free; the rest self-dual)."""
        z = np.array(z, dtype=float)
        z[self.nonneg_idx] = np.maximum(z[self.nonneg_idx], 0.0)
        self._project_socs(z)
        self._project_psd_part(z)
        return z


def project_cone(z: np.ndarray, cones) -> np.ndarray:
    return _ConeMeta(cones).project(z)


def project_dual_cone(z: np.ndarray, cones) -> np.ndarray:
    return _ConeMeta(cones).project_dual(z)


# ---------------------------------------------------------------------------
# data equilibration


def _row_groups(cones):
    """Group id per row; separable cone rows scale independently."""
    gids = np.zeros(sum(seg.dim for seg in cones), dtype=int)
    gid = 0
    offset = 0
    for seg in cones:
        if seg.kind in ("zero", "nonneg"):
            gids[offset:offset + seg.dim] = gid + np.arange(seg.dim)
            gid += seg.dim
        else:
            gids[offset:offset + seg.dim] = gid
            gid += 1
        offset += seg.dim
    return gids, gid


def _equilibrate(A: sp.csr_matrix, cones, iters: int):
    """Ruiz equilibration with per-cone-group uniform row scalings."""
    m, n = A.shape
    D = np.ones(m)
    E = np.ones(n)
    gids, ngroups = _row_groups(cones)
    for _ in range(iters):
        As = sp.diags(D) @ A @ sp.diags(E)
        absA = abs(As)
        rnorm = absA.max(axis=1).toarray().ravel()
        gnorm = np.zeros(ngroups)
        np.maximum.at(gnorm, gids, rnorm)
        dscale = 1.0 / np.sqrt(np.clip(gnorm[gids], 1e-8, 1e8))
        cnorm = absA.max(axis=0).toarray().ravel()
        escale = 1.0 / np.sqrt(np.clip(cnorm, 1e-8, 1e8))
        D *= np.clip(dscale, 1e-4, 1e4)
        E *= np.clip(escale, 1e-4, 1e4)
    return D, E


# ---------------------------------------------------------------------------
# the reference solver


class SplittingWorkspace:
    """Prepared solver state: equilibrated data + cached KKT factorization.

    Reusable across solves that share A and c (only ``b`` changing), which is
    exactly the retry pattern of the rank-minimization inner loop.
    """

    def __init__(self, problem: ConicProblem, settings: SolverSettings | None = None):
        problem.validate()
        self.problem = problem
        self.settings = settings or SolverSettings()
        self.meta = _ConeMeta(problem.cones)
        self.m, self.n = problem.A.shape

        self.D, self.E = _equilibrate(problem.A, problem.cones,
                                      self.settings.ruiz_iters)
        self.As = (sp.diags(self.D) @ problem.A @ sp.diags(self.E)).tocsr()
        self.AsT = self.As.T.tocsr()
        self.cs = self.E * problem.c
        self._set_b(problem.b)

        N = (self.AsT @ self.As).toarray()
        N[np.diag_indices_from(N)] += 1.0
        self._chol = scipy.linalg.cho_factor(N, lower=True, check_finite=False)

    # -- scaled-data helpers -------------------------------------------------

    def _set_b(self, b):
        self.b_orig = np.asarray(b, dtype=float)
        self.bs = self.D * self.b_orig
        self._zeta = None

    def _msolve(self, rx, ry):
        t = rx - self.AsT @ ry
        zx = scipy.linalg.cho_solve(self._chol, t, check_finite=False)
        return zx, ry + self.As @ zx

    def _lin_solve(self, w):
        n = self.n
        if self._zeta is None:
            zx, zy = self._msolve(self.cs, self.bs)
            self._zeta = (zx, zy)
            self._denom = 1.0 + self.cs @ zx + self.bs @ zy
        px, py = self._msolve(w[:n], w[n:-1])
        tau = (w[-1] + self.cs @ px + self.bs @ py) / self._denom
        return np.concatenate([px - tau * self._zeta[0],
                               py - tau * self._zeta[1], [tau]])

    def _project_u(self, z):
        n = self.n
        out = z.copy()
        out[n:-1] = self.meta.project_dual(z[n:-1])
        out[-1] = max(out[-1], 0.0)
        return out

    # -- main loop -----------------------------------------------------------

    def solve(self, b=None, warm=None) -> SolveResult:
        st = self.settings
        if b is not None:
            self._set_b(b)
        A, c, bb = self.problem.A, self.problem.c, self.b_orig
        bnorm = float(np.linalg.norm(bb))
        cnorm = float(np.linalg.norm(c))
        n, m = self.n, self.m

        u = np.zeros(n + m + 1)
        v = np.zeros(n + m + 1)
        u[-1] = 1.0
        v[-1] = 1.0
        if warm is not None:
            x0, y0, s0 = warm
            u[:n] = x0 / self.E
            u[n:-1] = y0 / self.D
            u[-1] = 1.0
            v[n:-1] = self.D * s0
            v[-1] = 0.0

        start = time.perf_counter()
        alpha = st.relaxation
        best = None          # (max_res, x, y, s, pres, dres, gap, obj)
        history = []         # (iteration, best max_res) at each check
        status = STATUS_MAX_ITERS
        certificate = None
        it = 0

        while it < st.max_iters:
            it += 1
            ut = self._lin_solve(u + v)
            h = alpha * ut + (1.0 - alpha) * u
            u_new = self._project_u(h - v)
            v = v - h + u_new
            u = u_new

            if it % st.check_interval != 0 and it != st.max_iters:
                continue

            tau = u[-1]
            if tau > 1e-10:
                x = self.E * u[:n] / tau
                y = self.D * u[n:-1] / tau
                s = (v[n:-1] / self.D) / tau
                pres = float(np.linalg.norm(A @ x + s - bb)) / (1.0 + bnorm)
                dres = float(np.linalg.norm(A.T @ y + c)) / (1.0 + cnorm)
                ctx = float(c @ x)
                bty = float(bb @ y)
                gap = abs(ctx + bty) / (1.0 + abs(ctx) + abs(bty))
                max_res = max(pres, dres, gap)
                if best is None or max_res < best[0]:
                    best = (max_res, x, y, s, pres, dres, gap, ctx)
                history.append((it, best[0]))
                if max_res <= st.eps_target:
                    status = STATUS_OPTIMAL
                    break
                # plateau acceptance at the looser tolerance
                back = st.stall_window // st.check_interval
                if (best[0] <= st.eps_acceptance and len(history) > back
                        and history[-1 - back][1] < math.inf
                        and best[0] > 0.9 * history[-1 - back][1]):
                    status = STATUS_OPTIMAL
                    break

            # infeasibility certificates from the (unscaled) homogeneous iterate
            ycert = self.D * u[n:-1]
            bty = float(bb @ ycert)
            if bty < -1e-12:
                ycert = ycert / (-bty)
                if float(np.linalg.norm(A.T @ ycert)) <= st.eps_infeasible:
                    status = STATUS_PRIMAL_INFEASIBLE
                    certificate = ycert
                    break
            xcert = self.E * u[:n]
            ctx = float(c @ xcert)
            if ctx < -1e-12:
                xcert = xcert / (-ctx)
                scert = self.meta.project(-(A @ xcert))
                if float(np.linalg.norm(A @ xcert + scert)) <= st.eps_infeasible:
                    status = STATUS_DUAL_INFEASIBLE
                    certificate = xcert
                    break
            if st.time_limit is not None and time.perf_counter() - start > st.time_limit:
                break

        elapsed = time.perf_counter() - start
        if status in (STATUS_PRIMAL_INFEASIBLE, STATUS_DUAL_INFEASIBLE):
            zero = np.zeros(0)
            return SolveResult(status, zero, zero, zero, math.nan, math.nan,
                               math.nan, math.nan, it, elapsed, certificate)
        if best is None:
            return SolveResult(STATUS_MAX_ITERS, np.zeros(n), np.zeros(m),
                               np.zeros(m), math.nan, math.inf, math.inf,
                               math.inf, it, elapsed)
        max_res, x, y, s, pres, dres, gap, obj = best
        if status != STATUS_OPTIMAL:
            status = STATUS_OPTIMAL if max_res <= st.eps_acceptance else STATUS_MAX_ITERS
        return SolveResult(status, x, y, s, obj, pres, dres, gap, it, elapsed)


def solve_conic(problem: ConicProblem, settings: SolverSettings | None = None,
                warm=None) -> SolveResult:
    """Solve a conic problem with the built-in reference solver."""
    return SplittingWorkspace(problem, settings).solve(warm=warm)


def extract_blocks(problem: ConicProblem, program: LiftedProgram,
                   result: SolveResult) -> np.ndarray:
    """Block coordinates read back from the PSD slack segments.

    The slack copy is exactly positive semidefinite (it is a projection
    output), while agreeing with the primal coordinates within the solver
    tolerance; downstream eigenvalue logic prefers it.
    """
    x = result.x[:program.layout.dim].copy()
    offset = 0
    for seg in problem.cones:
        if seg.kind == "psd":
            # psd segments appear in layout order and cover the block coords
            break
        offset += seg.dim
    pos = offset
    for slot in program.layout.slots:
        x[slot.offset:slot.offset + slot.dim] = result.s[pos:pos + slot.dim]
        pos += slot.dim
    return x
