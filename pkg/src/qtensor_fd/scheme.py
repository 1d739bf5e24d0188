"""One step of the linear, energy-stable IEQ scheme for the Q-tensor flow.

Each step freezes ``Pbar = P((3/2) Q^n - (1/2) Q^{n-1})``, solves the SPD
system ``A(Q^{n+1}) = F(Q^n)`` matrix-free, and then updates the auxiliary
variable explicitly: ``r^{n+1} = r^n + Pbar : (Q^{n+1} - Q^n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConvergenceError, IntegrityError
from .fields import (
    GridSpec,
    alpha_h,
    div_h,
    grad_norm_h,
    inner_h,
    laplacian_h,
    norm_h,
    zero_boundary,
)
from .linsolve import SolverConfig, cg_solve
from .potential import ModelParams, p_bar

__all__ = [
    "SchemeState",
    "StepReport",
    "Diagnostics",
    "REPORT_COLUMNS",
    "TOL_SYM",
    "TOL_TRACE",
    "apply_A",
    "build_F",
    "jacobi_diagonal",
    "chemical_potential",
    "energy",
    "diagnostics",
    "step",
]

TOL_SYM = 1e-11
TOL_TRACE = 1e-11

REPORT_COLUMNS = (
    "step",
    "time",
    "energy",
    "dissipation_residual",
    "trace_drift",
    "sym_drift",
    "cg_iters",
    "cg_residual",
)


@dataclass
class SchemeState:
    """Solution at time level ``n`` together with the previous level."""

    grid: GridSpec
    params: ModelParams
    q: np.ndarray
    q_prev: np.ndarray
    r: np.ndarray
    n: int = 0

    @classmethod
    def start(cls, grid: GridSpec, params: ModelParams, q0: np.ndarray, r0: np.ndarray) -> "SchemeState":
        # no level -1 exists; reusing Q^0 makes the first extrapolant P(Q^0)
        return cls(grid, params, q0.copy(), q0.copy(), r0.copy(), 0)

    @property
    def time(self) -> float:
        return self.n * self.params.dt

    def __post_init__(self):
        if self.grid.dim != self.params.dim:
            raise ValueError(f"grid dim {self.grid.dim} != params dim {self.params.dim}")
        if not np.all(np.isfinite(self.r)) or np.min(self.r[self.grid.nodes]) <= 0:
            raise IntegrityError("r must be finite and positive at every node", step=self.n)


@dataclass
class StepReport:
    step: int
    time: float
    energy_before: float
    energy_after: float
    dissipation: float  # dt * M * ||H^{n+1/2}||_h^2
    dissipation_residual: float
    residual_bound: float  # dt * tol * ||F(Q^n)||_h * ||H||_h, guaranteed by a converged solve
    trace_drift: float
    sym_drift: float
    solver_iterations: int
    solver_residual: float
    dq_norm: float = 0.0  # ||D_t^+ Q^n||_h
    dr_l1: float = 0.0  # h^d * sum over interior of |D_t^+ r^n|
    residual_estimate: float = 0.0  # dt * ||A(Q^{n+1}) - F(Q^n)||_h * ||H||_h
    extra: dict = field(default_factory=dict)

    def csv_row(self) -> tuple:
        return (
            self.step,
            self.time,
            self.energy_after,
            self.dissipation_residual,
            self.trace_drift,
            self.sym_drift,
            self.solver_iterations,
            self.solver_residual,
        )


class Diagnostics(NamedTuple):
    trace_drift: float
    sym_drift: float
    min_r: float
    max_q_frobenius: float


def _pdot(P: np.ndarray, X: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...ij->...", P, X)


def apply_A(X: np.ndarray, pbar: np.ndarray, grid: GridSpec, params: ModelParams) -> np.ndarray:
    """``X/dt - (M L1/2) lap X + (M/2)(Pbar:X) Pbar - M (L2+L3)/4 alpha_h X``."""
    M = params.M
    out = X / params.dt - (0.5 * M * params.L1) * laplacian_h(X, grid)
    out += (0.5 * M) * _pdot(pbar, X)[..., None, None] * pbar
    if params.L23 != 0.0:
        out -= (0.25 * M * params.L23) * alpha_h(X, grid)
    return zero_boundary(out, grid)


def build_F(state: SchemeState, pbar: np.ndarray) -> np.ndarray:
    """Right-hand side of the step, with ``r^{n+1/2}`` eliminated via the r-update."""
    grid, params, Q = state.grid, state.params, state.q
    M = params.M
    out = Q / params.dt + (0.5 * M * params.L1) * laplacian_h(Q, grid)
    out += (0.5 * M * _pdot(pbar, Q) - M * state.r)[..., None, None] * pbar
    if params.L23 != 0.0:
        out += (0.25 * M * params.L23) * alpha_h(Q, grid)
    return zero_boundary(out, grid)


def jacobi_diagonal(pbar: np.ndarray, grid: GridSpec, params: ModelParams) -> np.ndarray:
    """Per-node scalar estimate of the diagonal of ``A``."""
    h2 = grid.h ** 2
    M = params.M
    diag = 1.0 / params.dt + 0.5 * M * params.L1 * 2 * grid.dim / h2
    diag = diag + 0.5 * M * _pdot(pbar, pbar)
    if params.L23 != 0.0:
        # central second differences have centre weight 1/(2h^2)
        diag = diag + 0.25 * M * params.L23 / h2
    return np.broadcast_to(diag, grid.padded_shape).copy()


def chemical_potential(
    q_new: np.ndarray,
    q_old: np.ndarray,
    r_new: np.ndarray,
    r_old: np.ndarray,
    pbar: np.ndarray,
    grid: GridSpec,
    params: ModelParams,
) -> np.ndarray:
    """``H = L1 lap Q^{n+1/2} - r^{n+1/2} Pbar + (L2+L3)/2 alpha_h(Q^{n+1/2})``."""
    q_half = 0.5 * (q_new + q_old)
    r_half = 0.5 * (r_new + r_old)
    H = params.L1 * laplacian_h(q_half, grid) - r_half[..., None, None] * pbar
    if params.L23 != 0.0:
        H += 0.5 * params.L23 * alpha_h(q_half, grid)
    return zero_boundary(H, grid)


def energy(Q: np.ndarray, r: np.ndarray, grid: GridSpec, params: ModelParams) -> float:
    """Discrete energy ``(L1/2)|grad Q|^2 + ((L2+L3)/2)|div Q|^2 + |r|^2/2``."""
    e = 0.5 * params.L1 * grad_norm_h(Q, grid) ** 2 + 0.5 * inner_h(r, r, grid)
    if params.L23 != 0.0:
        e += 0.5 * params.L23 * norm_h(div_h(Q, grid), grid) ** 2
    return e


def diagnostics(state: SchemeState) -> Diagnostics:
    g = state.grid
    Q = state.q[g.interior]
    tr = np.abs(np.trace(Q, axis1=-2, axis2=-1))
    asym = np.abs(Q - np.swapaxes(Q, -1, -2))
    return Diagnostics(
        trace_drift=float(np.max(tr, initial=0.0)),
        sym_drift=float(np.max(asym, initial=0.0)),
        min_r=float(np.min(state.r[g.nodes])),
        max_q_frobenius=float(np.sqrt(np.max(np.einsum("...ij,...ij->...", Q, Q), initial=0.0))),
    )


def step(
    state: SchemeState,
    solver: SolverConfig = SolverConfig(),
    check_integrity: bool = True,
    tol_sym: float = TOL_SYM,
    tol_trace: float = TOL_TRACE,
    energy_before: Optional[float] = None,
):
    """Advance ``state`` by one time step; returns ``(new_state, report)``."""
    grid, params = state.grid, state.params
    if energy_before is None:
        energy_before = energy(state.q, state.r, grid, params)

    pb = p_bar(state.q, state.q_prev, params)
    rhs = build_F(state, pb)
    op = lambda X: apply_A(X, pb, grid, params)  # noqa: E731
    try:
        sol = cg_solve(op, rhs, state.q, grid, solver, diag=jacobi_diagonal(pb, grid, params))
    except ConvergenceError as exc:
        exc.step = state.n
        raise
    q_new = zero_boundary(sol.x, grid)

    # second line of the scheme, evaluated directly
    r_new = state.r + _pdot(pb, q_new - state.q)

    H = chemical_potential(q_new, state.q, r_new, state.r, pb, grid, params)
    h_norm = norm_h(H, grid)
    dissipation = params.dt * params.M * h_norm ** 2
    energy_after = energy(q_new, r_new, grid, params)
    rho = op(q_new) - rhs
    new_state = replace(state, q=q_new, q_prev=state.q, r=r_new, n=state.n + 1)
    diag = diagnostics(new_state)

    if check_integrity and (diag.trace_drift > tol_trace or diag.sym_drift > tol_sym):
        Q = q_new[grid.interior]
        bad = np.abs(np.trace(Q, axis1=-2, axis2=-1)) + np.max(
            np.abs(Q - np.swapaxes(Q, -1, -2)), axis=(-2, -1)
        )
        node = tuple(int(i) + 1 for i in np.unravel_index(np.argmax(bad), bad.shape))
        raise IntegrityError(
            f"step {new_state.n}: trace drift {diag.trace_drift:.3e}, symmetry drift "
            f"{diag.sym_drift:.3e} exceed tolerances ({tol_trace:.0e}, {tol_sym:.0e}) at node {node}",
            step=new_state.n,
            node=node,
        )

    dt = params.dt
    dr = (r_new - state.r)[grid.interior]
    report = StepReport(
        step=new_state.n,
        time=new_state.time,
        energy_before=energy_before,
        energy_after=energy_after,
        dissipation=dissipation,
        dissipation_residual=(energy_after - energy_before) + dissipation,
        residual_bound=dt * solver.rel_tolerance * norm_h(rhs, grid) * h_norm,
        trace_drift=diag.trace_drift,
        sym_drift=diag.sym_drift,
        solver_iterations=sol.iterations,
        solver_residual=sol.residual,
        dq_norm=norm_h(q_new - state.q, grid) / dt,
        dr_l1=grid.h ** grid.dim * float(np.sum(np.abs(dr))) / dt,
        residual_estimate=dt * norm_h(rho, grid) * h_norm,
    )
    return new_state, report
