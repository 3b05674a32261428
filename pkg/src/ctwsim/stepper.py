"""Implicit Euler time step solved by a full Newton iteration."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import splu

from .assembly import Assembler, Constraints
from .constitutive import ConstitutiveError, MaterialPointState
from .krylov import SolverError, gmres_solve
from .mesh import DOFS_PER_NODE, BoxDecomposition, classify_interface
from .schwarz import ORDERING, SchwarzPreconditioner, SolverSettings, maybe_rebuild

LOG_COLUMNS = ("time", "newton_iters", "gmres_iters_total", "t_assemble", "t_pc", "t_solve", "t_total")


class ConvergenceError(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass
class NewtonSettings:
    tol: float = 1e-3
    max_iter: int = 25
    divergence_factor: float = 1e8
    line_search: bool = False

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("Newton tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class StepReport:
    time: float
    newton_iters: int = 0
    residual_norms: list = field(default_factory=list)
    norms_u: list = field(default_factory=list)
    norms_theta: list = field(default_factory=list)
    gmres_iters: list = field(default_factory=list)
    t_assemble: float = 0.0
    t_pc: float = 0.0
    t_solve: float = 0.0
    t_total: float = 0.0
    pc_builds: int = 0
    converged: bool = False

    @property
    def gmres_iters_total(self) -> int:
        return int(sum(self.gmres_iters))

    def log_row(self) -> dict:
        return {
            "time": self.time,
            "newton_iters": self.newton_iters,
            "gmres_iters_total": self.gmres_iters_total,
            "t_assemble": self.t_assemble,
            "t_pc": self.t_pc,
            "t_solve": self.t_solve,
            "t_total": self.t_total,
        }


def residual_norm(R: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Euclidean norm over free DOFs."""
    if mask is None:
        return float(np.linalg.norm(R))
    return float(np.linalg.norm(R[~mask]))


def _field_norms(R, mask):
    free = ~mask
    u = free.copy()
    u[3::DOFS_PER_NODE] = False
    th = np.zeros_like(free)
    th[3::DOFS_PER_NODE] = free[3::DOFS_PER_NODE]
    return float(np.linalg.norm(R[u])), float(np.linalg.norm(R[th]))


class NewtonSolver:
    """Newton loop around an :class:`Assembler`.

    ``linear`` selects the linear solver: ``"schwarz"`` (GMRES with the
    Schwarz preconditioner over ``decomp``) or ``"direct"`` (sparse LU).
    """

    def __init__(
        self,
        assembler: Assembler,
        decomp: BoxDecomposition | None = None,
        solver: SolverSettings = SolverSettings(),
        newton: NewtonSettings = NewtonSettings(),
        linear: str = "schwarz",
    ):
        if linear not in ("schwarz", "direct"):
            raise ValueError("linear solver must be 'schwarz' or 'direct'")
        if linear == "schwarz" and decomp is None:
            raise ValueError("the Schwarz solver needs a decomposition")
        self.assembler = assembler
        self.decomp = decomp
        self.solver = solver
        self.newton = newton
        self.linear = linear
        self.comps = classify_interface(decomp) if decomp is not None else None
        self.precond: SchwarzPreconditioner | None = None
        self.total_builds = 0

    def _solve(self, K, rhs, mask, step_index, k, report):
        t0 = time.perf_counter()
        if self.linear == "direct":
            dx = splu(K.tocsc(), permc_spec=ORDERING).solve(rhs)
            report.t_solve += time.perf_counter() - t0
            report.gmres_iters.append(0)
            return dx
        old = self.precond
        self.precond = maybe_rebuild(
            self.precond, K, self.decomp, step_index, k, self.solver, DOFS_PER_NODE, mask, self.comps
        )
        if self.precond is not old:
            report.pc_builds += 1
            self.total_builds += 1
        t1 = time.perf_counter()
        report.t_pc += t1 - t0
        res = gmres_solve(
            K,
            rhs,
            self.precond,
            self.solver.restart,
            self.solver.rtol,
            self.solver.atol,
            self.solver.max_iter,
        )
        report.t_solve += time.perf_counter() - t1
        report.gmres_iters.append(res.iterations)
        return res.x

    def advance(
        self,
        x_n: np.ndarray,
        states_n: MaterialPointState,
        t_n: float,
        dt: float,
        constraints: Constraints,
        step_index: int = 0,
    ):
        """Solve one implicit Euler step; returns ``(x, states, report)``.

        Constraints are imposed at the start and held through the step.  At
        least one Newton correction is always taken.
        """
        st = self.newton
        t_start = time.perf_counter()
        t_new = t_n + dt
        report = StepReport(time=t_new)
        x = x_n.copy()
        if len(constraints):
            x[constraints.dofs] = constraints.values
        asm = self.assembler
        mask = constraints.mask(asm.n_dofs)

        def fail(msg):
            report.t_total = time.perf_counter() - t_start
            raise ConvergenceError(f"step to t={t_new:.6g}s: {msg}", report)

        k = 0
        while True:
            t0 = time.perf_counter()
            try:
                system = asm.assemble(x, x_n, states_n, dt, constraints)
            except ConstitutiveError as exc:
                fail(f"material update failed at Newton iteration {k}: {exc}")
            report.t_assemble += time.perf_counter() - t0
            rn = residual_norm(system.R, mask)
            nu, nt = _field_norms(system.R, mask)
            report.residual_norms.append(rn)
            report.norms_u.append(nu)
            report.norms_theta.append(nt)
            if not np.isfinite(rn):
                fail("non-finite residual")
            if k >= 1 and rn <= st.tol:
                break
            if k >= 1 and rn > st.divergence_factor * max(report.residual_norms[0], st.tol):
                fail(f"divergence guard tripped (residual {rn:.3e})")
            if k >= st.max_iter:
                fail(f"no convergence in {st.max_iter} Newton iterations (residual {rn:.3e})")
            try:
                dx = self._solve(system.K, -system.R, mask, step_index, k, report)
            except SolverError as exc:
                fail(f"linear solve failed: {exc}")
            dx[mask] = 0.0
            if st.line_search:
                x = self._backtrack(x, dx, x_n, states_n, dt, constraints, mask, rn)
            else:
                x = x + dx
            k += 1
        report.newton_iters = k
        report.converged = True
        report.t_total = time.perf_counter() - t_start
        return x, system.states, report

    def _backtrack(self, x, dx, x_n, states_n, dt, constraints, mask, rn):
        step = 1.0
        for _ in range(6):
            trial = x + step * dx
            try:
                r = self.assembler.assemble(trial, x_n, states_n, dt, constraints, want_tangent=False).R
                if residual_norm(r, mask) < rn:
                    return trial
            except ConstitutiveError:
                pass
            step *= 0.5
        return x + step * dx
