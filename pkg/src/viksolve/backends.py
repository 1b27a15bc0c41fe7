"""Pluggable conic solver backends behind one workspace interface.

A backend's ``prepare(problem, settings)`` returns a workspace whose
``solve(b=None, warm=None)`` solves the problem, optionally with a replaced
right-hand side (reusing any cached factorization) and a warm-start triple
``(x, y, s)``.  ``reference`` is the built-in operator-splitting solver;
``clarabel`` wraps the Clarabel interior-point solver when installed and is
useful as a high-accuracy cross-check.
"""

from __future__ import annotations

import time
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .conic import (ConicProblem, SolveResult, SolverSettings,
                    SplittingWorkspace, STATUS_DUAL_INFEASIBLE,
                    STATUS_MAX_ITERS, STATUS_OPTIMAL, STATUS_PRIMAL_INFEASIBLE)
from .lift import tri_indices, tri_size


class ReferenceBackend:
    name = "reference"

    def prepare(self, problem: ConicProblem, settings: SolverSettings | None = None):
        return SplittingWorkspace(problem, settings)


@lru_cache(maxsize=None)
def _upper_triangle_permutation(order: int) -> np.ndarray:
    """Map our lower-column-major triangle positions to upper-column-major."""
    ti, tj = tri_indices(order)
    return np.array([i * (i + 1) // 2 + j for i, j in zip(ti, tj)])


class _ClarabelWorkspace:
    def __init__(self, problem: ConicProblem, settings: SolverSettings | None):
        import clarabel

        self._clarabel = clarabel
        self.problem = problem
        self.settings = settings or SolverSettings()
        self.cones = []
        perm = np.arange(problem.m)
        offset = 0
        for seg in problem.cones:
            if seg.kind == "zero":
                self.cones.append(clarabel.ZeroConeT(seg.dim))
            elif seg.kind == "nonneg":
                self.cones.append(clarabel.NonnegativeConeT(seg.dim))
            elif seg.kind == "soc":
                self.cones.append(clarabel.SecondOrderConeT(seg.dim))
            else:
                self.cones.append(clarabel.PSDTriangleConeT(seg.order))
                perm[offset:offset + seg.dim] = offset + _upper_triangle_permutation(seg.order)
            offset += seg.dim
        # rows reordered so each PSD triangle matches clarabel's convention
        self.perm = perm
        self.inv_perm = np.argsort(perm)
        P = sp.csr_matrix((np.ones(problem.m), (perm, np.arange(problem.m))),
                          shape=(problem.m, problem.m))
        self.A = (P @ problem.A).tocsc()
        self.P = sp.csc_matrix((problem.n, problem.n))

    def solve(self, b=None, warm=None) -> SolveResult:
        clarabel = self._clarabel
        prob = self.problem
        b_use = prob.b if b is None else np.asarray(b, dtype=float)
        st = clarabel.DefaultSettings()
        st.verbose = False
        solver = clarabel.DefaultSolver(self.P, prob.c, self.A, b_use[self.perm],
                                        self.cones, st)
        t0 = time.perf_counter()
        sol = solver.solve()
        elapsed = time.perf_counter() - t0

        name = str(sol.status)
        if name in ("Solved", "AlmostSolved"):
            status = STATUS_OPTIMAL
        elif name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            status = STATUS_PRIMAL_INFEASIBLE
        elif name in ("DualInfeasible", "AlmostDualInfeasible"):
            status = STATUS_DUAL_INFEASIBLE
        else:
            status = STATUS_MAX_ITERS

        if status in (STATUS_PRIMAL_INFEASIBLE, STATUS_DUAL_INFEASIBLE):
            zero = np.zeros(0)
            cert = np.array(sol.z)[self.inv_perm] if status == STATUS_PRIMAL_INFEASIBLE \
                else np.array(sol.x)
            return SolveResult(status, zero, zero, zero, float("nan"), float("nan"),
                               float("nan"), float("nan"), sol.iterations, elapsed, cert)

        x = np.array(sol.x)
        y = np.array(sol.z)[self.inv_perm]
        s = np.array(sol.s)[self.inv_perm]
        bnorm = float(np.linalg.norm(b_use))
        cnorm = float(np.linalg.norm(prob.c))
        pres = float(np.linalg.norm(prob.A @ x + s - b_use)) / (1.0 + bnorm)
        dres = float(np.linalg.norm(prob.A.T @ y + prob.c)) / (1.0 + cnorm)
        ctx = float(prob.c @ x)
        bty = float(b_use @ y)
        gap = abs(ctx + bty) / (1.0 + abs(ctx) + abs(bty))
        return SolveResult(status, x, y, s, ctx, pres, dres, gap,
                           sol.iterations, elapsed)


class ClarabelBackend:
    name = "clarabel"

    def prepare(self, problem: ConicProblem, settings: SolverSettings | None = None):
        return _ClarabelWorkspace(problem, settings)


_BACKENDS = {"reference": ReferenceBackend, "clarabel": ClarabelBackend}


def get_backend(name: str):
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {sorted(_BACKENDS)}")
    if name == "clarabel":
        try:
            import clarabel  # noqa: F401
        except ImportError as exc:
            raise RuntimeError("the 'clarabel' backend requires the clarabel "
                               "package (pip install clarabel)") from exc
    return _BACKENDS[name]()
