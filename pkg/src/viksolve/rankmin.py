"""Rank minimization by iterative eigenvalue maximization on fixed-trace blocks.

The relaxation's blocks have fixed traces (3 for rotation blocks, 2 for
extension blocks), so pushing each block's largest eigenvalue toward its trace
drives all remaining eigenvalues to zero.  Each outer iteration solves a
convex update program: the relaxation's feasible set plus one linear row per
block family requiring, through the eigenvalue subgradient v1 v1', that the
summed leading eigenvalues close at least a (1 - c) fraction of their gap.
An adaptive schedule raises c toward 1 when the update program is infeasible.

Each accepted iterate therefore satisfies the geometric gap contraction
``sum(lambda1) - trace_total >= c * (previous gap)`` up to solver tolerance;
the margin is recorded per iteration and checked by the test suite.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .backends import get_backend
from .conic import (SolverSettings, to_conic, STATUS_MAX_ITERS, STATUS_OPTIMAL,
                    STATUS_PRIMAL_INFEASIBLE)
from .costs import QuadraticCost, build_cost
from .lift import AffineExpr, LiftedProgram, assemble_relaxation, svec
from .scene import AugmentedScene

CONTRACTION_TOL = 1e-6
STALL_PRIMAL_RES = 1e-3


@dataclass
class RankMinSettings:
    """Algorithm parameters: gap tolerance eps1, step tolerance eps2, loop
    limits, and the adaptive schedule c = 1 - (1 - c0)^(a (p - 1) + 1)."""

    eps1: float = 1e-3
    eps2: float = 1e-6
    k_max: int = 50
    p_max: int = 10
    c0: float = 0.5
    a: float = 1.0
    verbose: bool = False

    def __post_init__(self):
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.c0 < 1.0:
            raise ValueError("c0 must be in (0, 1)")
        if self.a <= 0:
            raise ValueError("a must be positive")
        if self.k_max < 1 or self.p_max < 1:
            raise ValueError("loop limits must be at least 1")


def c_schedule(c0: float, a: float, p: int) -> float:
    """Adaptive eigenvalue-row strength for retry p (1-based)."""
    return 1.0 - (1.0 - c0) ** (a * (p - 1) + 1.0)


def leading_eigpair(S: np.ndarray):
    """Largest eigenvalue and a unit eigenvector of a symmetric matrix.

    Ties (within 1e-10) return whichever leading eigenvector the
    decomposition produces; the subgradient row remains valid either way.
    """
    S = np.asarray(S, dtype=float)
    if np.abs(S - S.T).max() > 1e-9:
        raise ValueError("leading_eigpair requires a symmetric matrix")
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return float(w[-1]), V[:, -1].copy()


@dataclass
class IterateRecord:
    k: int
    p_used: int
    c: float
    rot_gap: float          # sum(lambda1) - 3 n_r, <= 0
    ext_gap: float          # sum(lambda1) - 2 n_p, <= 0
    cost: float
    step_norm: float
    rot_contraction_margin: float
    ext_contraction_margin: float
    trace_error: float
    solver_status: str
    solver_iterations: int

    def to_dict(self) -> dict:
        return {k: (v if not isinstance(v, float) else float(v))
                for k, v in self.__dict__.items()}


@dataclass
class IterateState:
    blocks: dict                      # (kind, owner) -> matrix
    x: np.ndarray                     # scalarized block coordinates
    k: int = 0
    p: int = 1
    history: list = field(default_factory=list)


@dataclass
class VikSolution:
    """Solve outcome: final state, recovered configuration, diagnostics."""

    termination: str
    state: IterateState
    program: LiftedProgram
    cost: QuadraticCost
    configuration: object = None      # JointValues | None
    frames: dict | None = None
    report: object = None             # ValidationReport | None
    recovery_error: str | None = None
    relaxation_cost: float = math.nan
    final_cost: float = math.nan
    outer_iterations: int = 0
    solver_iterations: int = 0
    solve_time: float = 0.0

    @property
    def converged(self) -> bool:
        return self.termination == "converged"

    @property
    def delta_f_bar(self) -> float:
        return self.final_cost - self.relaxation_cost


def _eigen_summary(layout, blocks):
    lam_rot, vec_rot, lam_ext, vec_ext = [], [], [], []
    for slot in layout.slots:
        lam, v = leading_eigpair(blocks[(slot.kind, slot.owner)])
        if slot.kind == "rotation":
            lam_rot.append(lam)
            vec_rot.append(v)
        else:
            lam_ext.append(lam)
            vec_ext.append(v)
    return lam_rot, vec_rot, lam_ext, vec_ext


def _eigen_rows(layout, blocks, c: float):
    """Subgradient inequality rows for the update program at strength c.

    Emits one row over the rotation blocks and, when extension blocks exist,
    one over those; each is returned as a (<= 0) scalar expression.  The
    right-hand constants are the only part depending on c.
    """
    lam_rot, vec_rot, lam_ext, vec_ext = _eigen_summary(layout, blocks)
    rows = []
    rot_slots = [s for s in layout.slots if s.kind == "rotation"]
    ext_slots = [s for s in layout.slots if s.kind == "extension"]
    if rot_slots:
        expr = AffineExpr(1)
        for slot, v in zip(rot_slots, vec_rot):
            coeffs = -svec(np.outer(v, v))
            for local, val in enumerate(coeffs):
                if val != 0.0:
                    expr.add_term(slot.offset + local, [val])
        gap = sum(lam_rot) - 3.0 * len(rot_slots)
        expr.const = np.array([sum(lam_rot) + (c - 1.0) * gap])
        rows.append(expr)
    if ext_slots:
        expr = AffineExpr(1)
        for slot, v in zip(ext_slots, vec_ext):
            coeffs = -svec(np.outer(v, v))
            for local, val in enumerate(coeffs):
                if val != 0.0:
                    expr.add_term(slot.offset + local, [val])
        gap = sum(lam_ext) - 2.0 * len(ext_slots)
        expr.const = np.array([sum(lam_ext) + (c - 1.0) * gap])
        rows.append(expr)
    return rows, (lam_rot, lam_ext)


def build_update_problem(state: IterateState, c: float, program: LiftedProgram,
                         cost: QuadraticCost):
    """Standard-form update program at strength c (spec per-iteration problem)."""
    rows, _ = _eigen_rows(program.layout, state.blocks, c)
    return to_conic(program, cost, extra_inequalities=rows)


def _blocks_from_result(problem, program, result):
    from .conic import extract_blocks
    x = extract_blocks(problem, program, result)
    return program.layout.unpack(x), x


def _trace_error(layout, blocks) -> float:
    err = 0.0
    for slot in layout.slots:
        target = 3.0 if slot.kind == "rotation" else 2.0
        err = max(err, abs(float(np.trace(blocks[(slot.kind, slot.owner)])) - target))
    return err


def _update_infeasible(result) -> bool:
    if result.status == STATUS_PRIMAL_INFEASIBLE:
        return True
    return result.status == STATUS_MAX_ITERS and result.primal_res > STALL_PRIMAL_RES


def _fit_warm(warm, problem, insert_at: int):
    """Pad a warm-start triple with slots for rows appended at ``insert_at``."""
    if warm is None:
        return None
    x, y, s = warm
    missing = problem.m - y.size
    if missing == 0:
        return warm
    if missing < 0:
        return None
    rows = problem.A[insert_at:insert_at + missing]
    s_new = np.maximum(0.0, problem.b[insert_at:insert_at + missing] - rows @ x)
    y2 = np.insert(y, insert_at, np.zeros(missing))
    s2 = np.insert(s, insert_at, s_new)
    return x, y2, s2


def solve_vik(aug: AugmentedScene, cost_specs, settings: RankMinSettings | None = None,
              solver_settings: SolverSettings | None = None, backend: str = "reference",
              facets: int = 64, shrink: float = 1.0, alpha: float | None = None,
              initial_state: IterateState | None = None, recover: bool = True) -> VikSolution:
    """Full solve: relaxation, rank minimization, recovery, validation.

    ``cost_specs`` is a cost specification array (see :mod:`viksolve.costs`)
    or a prebuilt :class:`QuadraticCost` over the assembled program.
    ``initial_state`` replaces the relaxation solve with a caller-supplied
    feasible state (trusted; used for warm restarts and loop-guard tests).
    """
    t_start = time.perf_counter()
    settings = settings or RankMinSettings()
    program = assemble_relaxation(aug, alpha=alpha, facets=facets, shrink=shrink)
    layout = program.layout
    if isinstance(cost_specs, QuadraticCost):
        cost = cost_specs
    else:
        cost = build_cost(program, cost_specs)

    backend_obj = get_backend(backend)
    n_r = sum(1 for s in layout.slots if s.kind == "rotation")
    n_p = sum(1 for s in layout.slots if s.kind == "extension")
    total_iters = 0

    relax_problem = to_conic(program, cost)
    if initial_state is None:
        ws = backend_obj.prepare(relax_problem, solver_settings)
        relax_result = ws.solve()
        total_iters += relax_result.iterations
        if relax_result.status != STATUS_OPTIMAL:
            state = IterateState(blocks={}, x=np.zeros(layout.dim))
            return VikSolution(termination="relaxation_infeasible", state=state,
                               program=program, cost=cost,
                               solver_iterations=total_iters,
                               solve_time=time.perf_counter() - t_start)
        blocks, x = _blocks_from_result(relax_problem, program, relax_result)
        warm = (relax_result.x, relax_result.y, relax_result.s)
    else:
        blocks, x = initial_state.blocks, initial_state.x
        warm = None
    state = IterateState(blocks=blocks, x=x)
    relax_cost_value = cost.value(x)

    k = 1
    step_norm = math.inf
    termination = None
    n_extra = (1 if n_r else 0) + (1 if n_p else 0)
    m_eq = sum(e.dim for e in program.equalities)
    extra_row_start = m_eq + len(program.inequalities)

    while True:
        lam_rot, vec_rot, lam_ext, vec_ext = _eigen_summary(layout, state.blocks)
        gaps_open = (any(l <= 3.0 - settings.eps1 for l in lam_rot)
                     or any(l <= 2.0 - settings.eps1 for l in lam_ext))
        if not gaps_open:
            termination = "converged"
            break
        if step_norm < settings.eps2:
            termination = "step_too_small"
            break
        if k > settings.k_max:
            termination = "k_max"
            break

        rot_gap_prev = sum(lam_rot) - 3.0 * n_r
        ext_gap_prev = sum(lam_ext) - 2.0 * n_p
        rows, _ = _eigen_rows(layout, state.blocks, c_schedule(settings.c0, settings.a, 1))
        update_problem = to_conic(program, cost, extra_inequalities=rows)
        ws = backend_obj.prepare(update_problem, solver_settings)
        warm_k = _fit_warm(warm, update_problem, extra_row_start)

        accepted = None
        p = 1
        c = c_schedule(settings.c0, settings.a, p)
        while p <= settings.p_max:
            c = c_schedule(settings.c0, settings.a, p)
            b = update_problem.b.copy()
            rows_c, _ = _eigen_rows(layout, state.blocks, c)
            for i, row in enumerate(rows_c):
                b[extra_row_start + i] = -float(row.const[0])
            result = ws.solve(b=b, warm=warm_k)
            total_iters += result.iterations
            if _update_infeasible(result):
                p += 1
                continue
            accepted = result
            break
        if accepted is None:
            termination = "p_max_exhausted"
            break

        new_blocks, new_x = _blocks_from_result(update_problem, program, accepted)
        step_norm = float(np.linalg.norm(new_x - state.x))
        lam_rot_new = [leading_eigpair(new_blocks[(s.kind, s.owner)])[0]
                       for s in layout.slots if s.kind == "rotation"]
        lam_ext_new = [leading_eigpair(new_blocks[(s.kind, s.owner)])[0]
                       for s in layout.slots if s.kind == "extension"]
        rot_gap_new = sum(lam_rot_new) - 3.0 * n_r
        ext_gap_new = sum(lam_ext_new) - 2.0 * n_p
        record = IterateRecord(
            k=k, p_used=p, c=c,
            rot_gap=rot_gap_new, ext_gap=ext_gap_new,
            cost=cost.value(new_x), step_norm=step_norm,
            rot_contraction_margin=rot_gap_new - c * rot_gap_prev,
            ext_contraction_margin=ext_gap_new - c * ext_gap_prev,
            trace_error=_trace_error(layout, new_blocks),
            solver_status=accepted.status,
            solver_iterations=accepted.iterations,
        )
        state.history.append(record)
        if settings.verbose:
            print(f"k={k} p={p} c={c:.4f} rot_gap={rot_gap_new:.3e} "
                  f"ext_gap={ext_gap_new:.3e} cost={record.cost:.6f} "
                  f"step={step_norm:.3e}")
        state.blocks, state.x = new_blocks, new_x
        warm = (accepted.x, accepted.y, accepted.s)
        state.k = k
        k += 1

    solution = VikSolution(
        termination=termination, state=state, program=program, cost=cost,
        relaxation_cost=relax_cost_value, final_cost=cost.value(state.x),
        outer_iterations=len(state.history), solver_iterations=total_iters,
        solve_time=time.perf_counter() - t_start,
    )
    if recover:
        from .recovery import recover_configuration, validate
        try:
            config, frames = recover_configuration(state, aug, program)
            solution.configuration = config
            solution.frames = frames
        except Exception as exc:  # recovery failure is an outcome, not a crash
            solution.recovery_error = str(exc)
        solution.report = validate(solution.configuration, aug, state, cost,
                                   program, solution)
    solution.solve_time = time.perf_counter() - t_start
    return solution
