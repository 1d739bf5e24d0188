"""Experiment catalog, simulation driver and post-processing.

Covers the 2D benchmark problems: a smooth convergence test, a defect
splitting run and a "disappearing hole" relaxation, plus refinement studies
in space and time, eigenvalue/director extraction and defect tracking.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import GridMismatchError, InputValidationError
from .fields import GridSpec, norm_h, project_initial
from .linsolve import SolverConfig
from .potential import ModelParams
from .scheme import SchemeState, StepReport, diagnostics, energy, step

log = logging.getLogger(__name__)

__all__ = [
    "director_field_example1",
    "director_field_example2",
    "director_field_example3",
    "INITIAL_CONDITIONS",
    "initial_condition",
    "ExperimentSpec",
    "CATALOG",
    "catalog_spec",
    "largest_eigenvalue",
    "director",
    "StabilityMonitor",
    "SimulationResult",
    "run_simulation",
    "l2_error",
    "convergence_order",
    "ConvergenceRow",
    "ConvergenceReport",
    "run_convergence_space",
    "run_convergence_time",
    "CONVERGENCE_TOLERANCE",
    "locate_defects",
]


# -- initial data -----------------------------------------------------------


def director_field_example1(x, y):
    return np.stack([x * (2 - x) * y * (2 - y), np.sin(np.pi * x) * np.sin(0.5 * np.pi * y)], axis=-1)


def director_field_example2(x, y):
    n1 = np.log(x ** 2 + 1) * (x - 2) ** 2 * np.sin(np.pi * y / 2) * (np.exp(1.5) - np.exp(x))
    n2 = (y - 2) * (y - 3) * np.sin(np.pi * y / 10) * np.sin(np.pi * x / 2) * (0.7 - y)
    return np.stack([n1, n2], axis=-1)


def director_field_example3(x, y):
    raw = np.stack([x * (1 - x) * y * (1 - y), np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)], axis=-1)
    length = np.linalg.norm(raw, axis=-1, keepdims=True)
    return raw / np.maximum(length, 1e-12)


def _uniaxial(n: np.ndarray) -> np.ndarray:
    # n n^T - |n|^2/2 I
    d = n.shape[-1]
    return n[..., :, None] * n[..., None, :] - 0.5 * np.sum(n * n, axis=-1)[..., None, None] * np.eye(d)


def _zero_2d(x, y):
    return np.zeros(np.shape(x) + (2, 2))


INITIAL_CONDITIONS: Dict[str, Callable] = {
    "example1": lambda x, y: _uniaxial(director_field_example1(x, y)),
    "example2_defect": lambda x, y: _uniaxial(director_field_example2(x, y)),
    "example3_hole": lambda x, y: _uniaxial(director_field_example3(x, y)),
    "zero": _zero_2d,
}


def initial_condition(key: str, x, y) -> np.ndarray:
    """Evaluate catalog initial data; broadcasts over array ``x``, ``y``."""
    try:
        fn = INITIAL_CONDITIONS[key]
    except KeyError:
        raise InputValidationError(
            f"unknown initial condition {key!r}; known: {sorted(INITIAL_CONDITIONS)}"
        ) from None
    return fn(np.asarray(x, dtype=float), np.asarray(y, dtype=float))


def _zero_nd(dim):
    def q0(*xs):
        return np.zeros(np.shape(xs[0]) + (dim, dim))

    return q0


# -- experiment specs -------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    initial_condition: str
    side: float
    n_cells: int
    steps: int
    T: float
    params: ModelParams
    snapshot_times: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.initial_condition not in INITIAL_CONDITIONS:
            raise InputValidationError(f"unknown initial condition {self.initial_condition!r}")
        if self.steps < 1 or self.n_cells < 2:
            raise InputValidationError("need at least one time step and two cells per axis")
        if not math.isclose(self.steps * self.params.dt, self.T, rel_tol=4 * np.finfo(float).eps, abs_tol=0.0):
            raise InputValidationError(
                f"T = {self.T} does not equal steps * dt = {self.steps} * {self.params.dt}"
            )

    @property
    def grid(self) -> GridSpec:
        return GridSpec.from_cells(self.params.dim, self.n_cells, self.side)

    def with_resolution(self, n_cells: Optional[int] = None, steps: Optional[int] = None) -> "ExperimentSpec":
        n_cells = self.n_cells if n_cells is None else n_cells
        steps = self.steps if steps is None else steps
        return replace(self, n_cells=n_cells, steps=steps, params=self.params.replace(dt=self.T / steps))

    def q0(self) -> Callable:
        if self.initial_condition == "zero":
            return _zero_nd(self.params.dim)
        if self.params.dim != 2:
            raise InputValidationError(f"initial condition {self.initial_condition!r} is 2D only")
        return INITIAL_CONDITIONS[self.initial_condition]


def _spec(name, ic, side, n, steps, T, snaps=(), **params) -> ExperimentSpec:
    L = params.pop("L")
    return ExperimentSpec(
        name=name,
        initial_condition=ic,
        side=side,
        n_cells=n,
        steps=steps,
        T=T,
        params=ModelParams.reduced_2d(L=L, dt=T / steps, **params),
        snapshot_times=tuple(snaps),
    )


CATALOG: Dict[str, ExperimentSpec] = {
    "example1": _spec("example1", "example1", 2.0, 80, 400, 0.4, (0.0, 0.4), L=0.001),
    "example2_defect": _spec(
        "example2_defect", "example2_defect", 2.0, 40, 4000, 4.0,
        tuple(0.5 * k for k in range(9)), L=0.001,
    ),
    "example3_hole": _spec(
        "example3_hole", "example3_hole", 1.0, 50, 100, 10.0,
        (0.0, 0.2, 0.4, 0.6, 0.8, 1.0), L=0.0025, a=-0.2, b=1.0, c=1.0,
    ),
    "zero": _spec("zero", "zero", 1.0, 16, 100, 0.1, (0.0, 0.1), L=0.001),
}


def catalog_spec(key: str) -> ExperimentSpec:
    try:
        return CATALOG[key]
    except KeyError:
        raise InputValidationError(f"unknown experiment {key!r}; known: {sorted(CATALOG)}") from None


# -- eigenvalues, director --------------------------------------------------


def largest_eigenvalue(Q: np.ndarray) -> np.ndarray:
    """Largest eigenvalue of symmetric trace-free 2x2 matrices: ``sqrt(Q11^2 + Q12^2)``."""
    Q = np.asarray(Q, dtype=float)
    p = 0.5 * (Q[..., 0, 0] - Q[..., 1, 1])
    q = 0.5 * (Q[..., 0, 1] + Q[..., 1, 0])
    return np.hypot(p, q)


def director(Q: np.ndarray):
    """Unit eigenvector for the largest eigenvalue, plus an isotropy flag.

    The sign is fixed so that the first non-zero component is positive.
    Where ``Q = 0`` the director is undefined: the vector is returned as
    zero and the flag is set.
    """
    Q = np.asarray(Q, dtype=float)
    p = 0.5 * (Q[..., 0, 0] - Q[..., 1, 1])
    q = 0.5 * (Q[..., 0, 1] + Q[..., 1, 0])
    theta = 0.5 * np.arctan2(q, p)  # in (-pi/2, pi/2]
    vec = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    isotropic = np.hypot(p, q) == 0.0
    vec = np.where(isotropic[..., None], 0.0, vec)
    return vec, isotropic


# -- simulation driver ------------------------------------------------------


@dataclass
class StabilityMonitor:
    """Running a-priori bounds that every run must satisfy.

    Tracks ``dt * sum ||D_t^+ Q^n||_h^2`` (bounded by ``M * E^0``), the
    ``||Q^m||_h`` estimate in terms of it, and ``dt * sum (h^d sum |D_t^+ r|)^2``.
    """

    E0: float
    M: float
    T: float
    q0_norm: float
    dt: float
    time_derivative_sum: float = 0.0
    r_derivative_sum: float = 0.0
    q_bound_violations: int = 0
    max_q_norm_ratio: float = 0.0

    def update(self, report: StepReport, q_norm: float) -> None:
        self.time_derivative_sum += self.dt * report.dq_norm ** 2
        self.r_derivative_sum += self.dt * report.dr_l1 ** 2
        bound = math.sqrt(self.T * self.time_derivative_sum) + self.q0_norm
        if q_norm > bound * (1 + 1e-12):
            self.q_bound_violations += 1
        if bound > 0:
            self.max_q_norm_ratio = max(self.max_q_norm_ratio, q_norm / bound)

    @property
    def time_derivative_bound(self) -> float:
        return self.M * self.E0

    def time_derivative_ok(self) -> bool:
        return self.time_derivative_sum <= self.time_derivative_bound * (1 + 1e-12)


@dataclass
class SimulationResult:
    spec: ExperimentSpec
    state: SchemeState
    initial_energy: float
    reports: List[StepReport]
    snapshots: Dict[float, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    monitor: Optional[StabilityMonitor] = None

    @property
    def energies(self) -> np.ndarray:
        return np.array([self.initial_energy] + [r.energy_after for r in self.reports])

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.reports) + 1) * self.spec.params.dt


def snap_times(times: Sequence[float], dt: float, T: float) -> Dict[int, float]:
    """Map requested snapshot times to step indices (nearest step)."""
    out = {}
    for t in times:
        if t < -1e-12 or t > T * (1 + 1e-12):
            raise InputValidationError(f"snapshot time {t} outside [0, {T}]")
        k = int(round(t / dt))
        if abs(k * dt - t) > 1e-9 * max(1.0, abs(t)):
            log.info("snapshot time %g snapped to step %d (t = %g)", t, k, k * dt)
        out[k] = k * dt
    return out


def run_simulation(
    spec: ExperimentSpec,
    solver: SolverConfig = SolverConfig(),
    snapshot_times: Optional[Sequence[float]] = None,
    keep_reports: bool = True,
    on_step: Optional[Callable[[SchemeState, StepReport], None]] = None,
    on_snapshot: Optional[Callable[[SchemeState], None]] = None,
) -> SimulationResult:
    grid, params = spec.grid, spec.params
    Q0, r0 = project_initial(spec.q0(), grid, params)
    state = SchemeState.start(grid, params, Q0, r0)
    E0 = energy(Q0, r0, grid, params)
    snaps = snap_times(spec.snapshot_times if snapshot_times is None else snapshot_times, params.dt, spec.T)
    monitor = StabilityMonitor(E0=E0, M=params.M, T=spec.T, q0_norm=norm_h(Q0, grid), dt=params.dt)
    result = SimulationResult(spec, state, E0, [], {}, monitor)

    def take_snapshot(s):
        result.snapshots[snaps[s.n]] = (s.q.copy(), s.r.copy())
        if on_snapshot is not None:
            on_snapshot(s)

    if 0 in snaps:
        take_snapshot(state)
    e = E0
    for _ in range(spec.steps):
        state, rep = step(state, solver, energy_before=e)
        e = rep.energy_after
        monitor.update(rep, norm_h(state.q, grid))
        if keep_reports:
            result.reports.append(rep)
        if on_step is not None:
            on_step(state, rep)
        if state.n in snaps:
            take_snapshot(state)
    result.state = state
    return result


# -- convergence studies ----------------------------------------------------


def l2_error(coarse: np.ndarray, coarse_grid: GridSpec, reference: np.ndarray, reference_grid: GridSpec):
    """Discrete L2 distance per component, sampling the reference at coincident nodes.

    Returns an array shaped like the per-node value (a float for scalars).
    """
    cg, rg = coarse_grid, reference_grid
    if cg.dim != rg.dim or cg.side != rg.side or cg.origin != rg.origin:
        raise GridMismatchError("grids cover different domains")
    ratio, rem = divmod(rg.n_cells, cg.n_cells)
    if rem or ratio < 1:
        raise GridMismatchError(f"grids with {cg.n_cells} and {rg.n_cells} cells are not nested")
    sub = (slice(1, 1 + rg.n_cells + 1, ratio),) * rg.dim
    ref = reference[sub]
    if ref.shape != coarse[cg.nodes].shape:
        raise GridMismatchError("value shapes differ between fields")
    diff = coarse[cg.nodes] - ref
    axes = tuple(range(cg.dim))
    err = np.sqrt(cg.h ** cg.dim * np.sum(diff * diff, axis=axes))
    return float(err) if np.ndim(err) == 0 else err


def convergence_order(errors: Sequence[float], factor: float = 2.0) -> List[float]:
    """``log_factor(e_{k-1}/e_k)``; the first entry and undefined orders are NaN."""
    orders = [math.nan]
    for prev, cur in zip(errors[:-1], errors[1:]):
        if prev > 0 and cur > 0:
            orders.append(math.log(prev / cur) / math.log(factor))
        else:
            log.warning("order undefined for errors %r -> %r", prev, cur)
            orders.append(math.nan)
    return orders


TRACKED = ("Q11", "Q12", "r")

# Solver errors of size tol * |Q| per step accumulate over thousands of steps;
# at 1e-10 they flatten the finest rungs of a time ladder, so studies solve tighter.
CONVERGENCE_TOLERANCE = 1e-13
CONVERGENCE_SOLVER = SolverConfig(rel_tolerance=CONVERGENCE_TOLERANCE)


@dataclass
class ConvergenceRow:
    size: float  # h or dt
    errors: Dict[str, float]
    orders: Dict[str, float]


@dataclass
class ConvergenceReport:
    kind: str  # "space" or "time"
    rows: List[ConvergenceRow]
    reference: str

    def orders(self, quantity: str) -> List[float]:
        return [row.orders[quantity] for row in self.rows]

    def errors(self, quantity: str) -> List[float]:
        return [row.errors[quantity] for row in self.rows]

    def to_csv(self, header_lines: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        cols = ["h_or_dt"]
        for q in TRACKED:
            cols += [f"err_{q}", f"order_{q}"]
        w.writerow(cols)
        for row in self.rows:
            vals = [repr(float(row.size))]
            for q in TRACKED:
                vals += [repr(float(row.errors[q])), "NaN" if math.isnan(row.orders[q]) else repr(row.orders[q])]
            w.writerow(vals)
        return buf.getvalue()

    def format_table(self) -> str:
        head = "h" if self.kind == "space" else "dt"
        lines = [f"{head:>10} " + " ".join(f"{'err ' + q:>12} {'order ' + q:>9}" for q in TRACKED)]
        for row in self.rows:
            parts = []
            for q in TRACKED:
                o = row.orders[q]
                parts.append(f"{row.errors[q]:12.5e} {'NaN' if math.isnan(o) else f'{o:9.5f}':>9}")
            lines.append(f"{row.size:10.4g} " + " ".join(parts))
        lines.append(f"reference: {self.reference}")
        return "\n".join(lines)


def _final_fields(spec: ExperimentSpec, solver: SolverConfig):
    res = run_simulation(spec, solver, snapshot_times=(), keep_reports=False)
    return res.state.q, res.state.r


def _run_all(specs, solver, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_final_fields, specs, [solver] * len(specs)))
    return [_final_fields(s, solver) for s in specs]


def _report(kind, sizes, runs, grids, ref, ref_grid, ref_desc) -> ConvergenceReport:
    errs = {q: [] for q in TRACKED}
    for (q, r), g in zip(runs, grids):
        eq = l2_error(q, g, ref[0], ref_grid)
        errs["Q11"].append(float(eq[0, 0]))
        errs["Q12"].append(float(eq[0, 1]))
        errs["r"].append(l2_error(r, g, ref[1], ref_grid))
    orders = {q: convergence_order(errs[q]) for q in TRACKED}
    rows = [
        ConvergenceRow(size, {q: errs[q][k] for q in TRACKED}, {q: orders[q][k] for q in TRACKED})
        for k, size in enumerate(sizes)
    ]
    return ConvergenceReport(kind, rows, ref_desc)


def run_convergence_space(
    spec: ExperimentSpec,
    ladder: Sequence[int],
    reference_n: int,
    reference_steps: int,
    solver: SolverConfig = CONVERGENCE_SOLVER,
    workers: int = 1,
) -> ConvergenceReport:
    """Refine in space at the time step of ``spec``; compare against a finer run.

    ``ladder`` lists cells per axis; each must divide ``reference_n``.
    """
    specs = [spec.with_resolution(n_cells=n) for n in ladder]
    ref_spec = spec.with_resolution(n_cells=reference_n, steps=reference_steps)
    for s in specs:
        if reference_n % s.n_cells:
            raise GridMismatchError(f"{s.n_cells} cells do not nest in {reference_n}")
    runs = _run_all(specs + [ref_spec], solver, workers)
    ref = runs.pop()
    return _report(
        "space",
        [s.grid.h for s in specs],
        runs,
        [s.grid for s in specs],
        ref,
        ref_spec.grid,
        f"n={reference_n}, steps={reference_steps}, T={spec.T}",
    )


def run_convergence_time(
    spec: ExperimentSpec,
    ladder: Sequence[int],
    reference_steps: int,
    solver: SolverConfig = CONVERGENCE_SOLVER,
    workers: int = 1,
) -> ConvergenceReport:
    """Refine in time on the grid of ``spec``; ``ladder`` lists step counts."""
    specs = [spec.with_resolution(steps=k) for k in ladder]
    ref_spec = spec.with_resolution(steps=reference_steps)
    runs = _run_all(specs + [ref_spec], solver, workers)
    ref = runs.pop()
    grid = spec.grid
    return _report(
        "time",
        [s.params.dt for s in specs],
        runs,
        [grid] * len(specs),
        ref,
        grid,
        f"n={spec.n_cells}, steps={reference_steps}, T={spec.T}",
    )


# -- defects ----------------------------------------------------------------


def locate_defects(lam: np.ndarray, grid: GridSpec, threshold: float = 0.25) -> List[Tuple[float, ...]]:
    """Centroids of point defects, read off the largest-eigenvalue field.

    A candidate is an interior node with ``lam < threshold * median(lam)``
    that is also a local minimum over its 3^d neighbourhood.  Candidates are
    grouped into 8-connected components (a flat-bottomed dip gives one
    component) and each component is reported by its centroid.  Nodes next
    to the boundary are ignored: the Dirichlet data forces ``lam -> 0``
    there, which is a boundary layer rather than a defect.  A bare threshold
    is not enough, since defects that drift towards the boundary sit inside
    a low-``lam`` region connected to that layer.
    """
    vals = np.asarray(lam, dtype=float)[grid.interior]
    med = float(np.median(vals))
    if med <= 0:
        return []
    local_min = vals == ndimage.minimum_filter(vals, size=3, mode="nearest")
    cand = local_min & (vals < threshold * med)
    for a in range(grid.dim):
        idx = [slice(None)] * grid.dim
        idx[a] = [0, -1]
        cand[tuple(idx)] = False
    labels, count = ndimage.label(cand, structure=np.ones((3,) * grid.dim))
    coords = [c[grid.interior] for c in grid.coords()]
    out = []
    for k in range(1, count + 1):
        mask = labels == k
        out.append(tuple(float(np.mean(c[mask])) for c in coords))
    return out
