"""Seeded property battery for the discrete operators and the scheme.

Every check draws random fields from a seeded generator and compares two
sides of an exact discrete identity.  ``faults`` lets a caller swap in a
deliberately broken operator to confirm the battery notices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import SimpleNamespace
from typing import Callable, Iterable, List

import numpy as np

from .fields import (
    GridSpec,
    alpha_h,
    diff,
    div_h,
    grad_inner_h,
    inner_h,
    laplacian_h,
    norm_h,
    zero_boundary,
)
from .linsolve import SolverConfig, dense_assemble
from .potential import ModelParams, p_of, r_of
from .scheme import SchemeState, apply_A, energy, step

__all__ = [
    "PropertyResult",
    "FAULTS",
    "random_tensor_field",
    "random_scalar_field",
    "operators",
    "check_sbp_forward_backward",
    "check_sbp_central",
    "check_laplacian_green",
    "check_alpha_divergence",
    "check_alpha_structure",
    "check_linearity",
    "check_operator_spd",
    "check_energy_identity",
    "check_structure_preservation",
    "check_lipschitz",
    "lipschitz_growth",
    "check_stationarity",
    "run_battery",
]

SBP_TOL = 1e-12


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _flipped_alpha(Q, grid):
    return -alpha_h(Q, grid)


FAULTS = {"alpha-sign": {"alpha": _flipped_alpha}}


def operators(faults: Iterable[str] = ()) -> SimpleNamespace:
    """The operators under test, with any named faults applied."""
    ops = SimpleNamespace(alpha=alpha_h, laplacian=laplacian_h, div=div_h)
    for name in faults:
        if name not in FAULTS:
            raise ValueError(f"unknown fault {name!r}; known: {sorted(FAULTS)}")
        for attr, fn in FAULTS[name].items():
            setattr(ops, attr, fn)
    return ops


def random_scalar_field(grid: GridSpec, rng: np.random.Generator, dirichlet: bool = True) -> np.ndarray:
    f = rng.standard_normal(grid.padded_shape)
    return zero_boundary(f, grid) if dirichlet else f


def random_tensor_field(grid: GridSpec, rng: np.random.Generator, sym_tracefree: bool = True, scale: float = 1.0) -> np.ndarray:
    d = grid.dim
    Q = scale * rng.standard_normal(grid.padded_shape + (d, d))
    if sym_tracefree:
        Q = 0.5 * (Q + np.swapaxes(Q, -1, -2))
        Q -= np.trace(Q, axis1=-2, axis2=-1)[..., None, None] / d * np.eye(d)
    return zero_boundary(Q, grid)


def _nodes_sum(a, grid):
    return float(np.sum(a[grid.nodes]))


def _rel(lhs, rhs, scale):
    return abs(lhs - rhs) / scale if scale > 0 else abs(lhs - rhs)


def _grids(dim_sizes=((2, 16), (3, 8))):
    for dim, n in dim_sizes:
        yield GridSpec(dim=dim, n_interior=n, side=1.0)


def check_sbp_forward_backward(rng, ops=None, n_fields=50, grids=None) -> PropertyResult:
    """``sum A D+ B = -sum B D- A`` and ``sum A D- B = -sum B D+ A`` for Dirichlet ``A``."""
    worst = 0.0
    for grid in grids or _grids():
        for _ in range(n_fields):
            A = random_scalar_field(grid, rng)
            B = random_scalar_field(grid, rng, dirichlet=False)
            for ax in range(1, grid.dim + 1):
                for k1, k2 in (("forward", "backward"), ("backward", "forward")):
                    t1 = A * diff(B, grid, ax, k1)
                    t2 = B * diff(A, grid, ax, k2)
                    scale = _nodes_sum(np.abs(t1), grid) + _nodes_sum(np.abs(t2), grid)
                    worst = max(worst, _rel(_nodes_sum(t1, grid), -_nodes_sum(t2, grid), scale))
    return PropertyResult("sbp forward/backward", worst <= SBP_TOL, f"max rel err {worst:.2e}")


def check_sbp_central(rng, ops=None, n_fields=50, grids=None) -> PropertyResult:
    """``sum A Dc B = -sum B Dc A`` when both vanish on boundary and ghosts."""
    worst = 0.0
    for grid in grids or _grids():
        for _ in range(n_fields):
            A = random_scalar_field(grid, rng)
            B = random_scalar_field(grid, rng)
            for ax in range(1, grid.dim + 1):
                t1 = A * diff(B, grid, ax, "central")
                t2 = B * diff(A, grid, ax, "central")
                scale = _nodes_sum(np.abs(t1), grid) + _nodes_sum(np.abs(t2), grid)
                worst = max(worst, _rel(_nodes_sum(t1, grid), -_nodes_sum(t2, grid), scale))
    return PropertyResult("sbp central", worst <= SBP_TOL, f"max rel err {worst:.2e}")


def check_laplacian_green(rng, ops=None, n_fields=50, grids=None) -> PropertyResult:
    """``<A, lap B>_h = -<grad A, grad B>_h``."""
    ops = ops or operators()
    worst = 0.0
    for grid in grids or _grids():
        for _ in range(n_fields):
            A = random_tensor_field(grid, rng)
            B = random_tensor_field(grid, rng)
            lhs = inner_h(A, ops.laplacian(B, grid), grid)
            rhs = -grad_inner_h(A, B, grid)
            scale = norm_h(A, grid) * norm_h(ops.laplacian(B, grid), grid)
            worst = max(worst, _rel(lhs, rhs, scale))
    return PropertyResult("laplacian green identity", worst <= SBP_TOL, f"max rel err {worst:.2e}")


def check_alpha_divergence(rng, ops=None, n_fields=50, grids=None) -> PropertyResult:
    """``<A, alpha_h B>_h = -2 <div A, div B>_h`` for symmetric trace-free fields."""
    ops = ops or operators()
    worst = 0.0
    for grid in grids or _grids():
        for _ in range(n_fields):
            A = random_tensor_field(grid, rng)
            B = random_tensor_field(grid, rng)
            aB = ops.alpha(B, grid)
            lhs = inner_h(A, aB, grid)
            dA, dB = ops.div(A, grid), ops.div(B, grid)
            rhs = -2.0 * inner_h(dA, dB, grid)
            scale = norm_h(A, grid) * norm_h(aB, grid) + 2.0 * norm_h(dA, grid) * norm_h(dB, grid)
            worst = max(worst, _rel(lhs, rhs, scale))
    return PropertyResult("alpha/divergence identity", worst <= SBP_TOL, f"max rel err {worst:.2e}")


def check_alpha_structure(rng, ops=None, n_fields=20, grids=None) -> PropertyResult:
    """``alpha_h`` output is trace-free for any input and symmetric for symmetric input."""
    ops = ops or operators()
    tr_worst = sym_worst = 0.0
    for grid in grids or _grids():
        for _ in range(n_fields):
            X = random_tensor_field(grid, rng, sym_tracefree=False)
            out = ops.alpha(X, grid)
            tr_worst = max(tr_worst, float(np.max(np.abs(np.trace(out, axis1=-2, axis2=-1)))) / max(1.0, float(np.max(np.abs(out)))))
            S = random_tensor_field(grid, rng)
            out = ops.alpha(S, grid)
            sym_worst = max(sym_worst, float(np.max(np.abs(out - np.swapaxes(out, -1, -2)))) / max(1.0, float(np.max(np.abs(out)))))
    ok = tr_worst <= 1e-13 and sym_worst <= 1e-13
    return PropertyResult("alpha trace-free and symmetric", ok, f"trace {tr_worst:.2e}, asymmetry {sym_worst:.2e}")


def check_linearity(rng, ops=None, n_fields=10, grids=None) -> PropertyResult:
    """``op(A + t B) = op(A) + t op(B)`` for every difference operator."""
    ops = ops or operators()
    worst = 0.0
    for grid in grids or _grids():
        named: List[Callable] = [ops.laplacian, ops.alpha, ops.div]
        named += [
            (lambda f, g, ax=ax, k=k: diff(f, g, ax, k))
            for ax in range(1, grid.dim + 1)
            for k in ("forward", "backward", "central")
        ]
        for _ in range(n_fields):
            A = random_tensor_field(grid, rng, sym_tracefree=False)
            B = random_tensor_field(grid, rng, sym_tracefree=False)
            t = float(rng.uniform(-3, 3))
            for op in named:
                lhs = op(A + t * B, grid)
                rhs = op(A, grid) + t * op(B, grid)
                scale = max(float(np.max(np.abs(lhs))), 1e-300)
                worst = max(worst, float(np.max(np.abs(lhs - rhs))) / scale)
    return PropertyResult("operator linearity", worst <= 1e-13, f"max rel err {worst:.2e}")


def _random_pbar(grid, rng, params, scale=0.5):
    Q = random_tensor_field(grid, rng, scale=scale)
    # P is evaluated on every stored node, boundary included
    return p_of(Q, params)


def check_operator_spd(rng, ops=None, n_fields=5) -> PropertyResult:
    """The assembled step operator is symmetric positive definite."""
    worst_sym, min_eig = 0.0, math.inf
    for dim, n in ((2, 4), (3, 3)):
        grid = GridSpec(dim=dim, n_interior=n, side=1.0)
        params = ModelParams(dt=0.1, dim=dim, L1=0.01, L2=0.005 if dim == 3 else 0.0, L3=0.003 if dim == 3 else 0.0)
        for _ in range(n_fields):
            pb = _random_pbar(grid, rng, params)
            A, _, _ = dense_assemble(lambda X: apply_A(X, pb, grid, params), grid)
            worst_sym = max(worst_sym, float(np.max(np.abs(A - A.T))) / float(np.max(np.abs(A))))
            min_eig = min(min_eig, float(np.linalg.eigvalsh(0.5 * (A + A.T))[0]))
    ok = worst_sym <= 1e-13 and min_eig > 0
    return PropertyResult("step operator SPD", ok, f"asymmetry {worst_sym:.2e}, smallest eigenvalue {min_eig:.3e}")


def _smooth_state(grid, params, rng):
    # a smooth random Dirichlet field built from a few sine modes
    coords = grid.coords()
    d = grid.dim
    Q = np.zeros(grid.padded_shape + (d, d))
    for _ in range(3):
        k = rng.integers(1, 4, size=d)
        amp = rng.standard_normal((d, d)) * 0.3
        amp = 0.5 * (amp + amp.T)
        amp -= np.trace(amp) / d * np.eye(d)
        shape = np.ones(grid.padded_shape)
        for a in range(d):
            shape = shape * np.sin(np.pi * k[a] * coords[a] / grid.side)
        Q += shape[..., None, None] * amp
    zero_boundary(Q, grid)
    r = np.full(grid.padded_shape, math.sqrt(2 * params.A0))
    r[grid.interior] = r_of(Q[grid.interior], params)
    return SchemeState.start(grid, params, Q, r)


def check_energy_identity(rng, ops=None, steps=20) -> PropertyResult:
    """``E^{n+1} - E^n = -dt M ||H||^2`` up to solver tolerance."""
    worst = 0.0
    for dim, n, L23 in ((2, 12, 0.0), (3, 6, 0.004)):
        grid = GridSpec(dim=dim, n_interior=n, side=1.0)
        params = ModelParams(dt=0.01, dim=dim, L1=0.01, L2=L23 / 2, L3=L23 / 2)
        state = _smooth_state(grid, params, rng)
        E0 = energy(state.q, state.r, grid, params)
        for _ in range(steps):
            state, rep = step(state, SolverConfig(rel_tolerance=1e-12))
            worst = max(worst, abs(rep.dissipation_residual) / E0)
    return PropertyResult("energy dissipation identity", worst <= 1e-9, f"max |residual|/E0 {worst:.2e}")


def check_structure_preservation(rng, ops=None, steps=20) -> PropertyResult:
    """Trace and asymmetry stay at round-off level over a short run."""
    tr = sym = 0.0
    for dim, n, L23 in ((2, 12, 0.0), (3, 6, 0.004)):
        grid = GridSpec(dim=dim, n_interior=n, side=1.0)
        params = ModelParams(dt=0.01, dim=dim, L1=0.01, L2=L23 / 2, L3=L23 / 2)
        state = _smooth_state(grid, params, rng)
        for _ in range(steps):
            state, rep = step(state, SolverConfig(rel_tolerance=1e-10))
            tr, sym = max(tr, rep.trace_drift), max(sym, rep.sym_drift)
    ok = tr <= 1e-10 and sym <= 1e-10
    return PropertyResult("trace and symmetry preservation", ok, f"trace {tr:.2e}, asymmetry {sym:.2e}")


def _lipschitz_ratios(rng, params, samples, q_max=20.0, dq_max=10.0):
    # uniform direction and uniform radius; a uniform-in-ball draw would put
    # almost no mass near the origin in the 5-dimensional 3D subspace
    d = params.dim

    def draw(radius):
        X = rng.standard_normal((samples, d, d))
        X = 0.5 * (X + np.swapaxes(X, -1, -2))
        X -= np.trace(X, axis1=-2, axis2=-1)[:, None, None] / d * np.eye(d)
        norms = np.linalg.norm(X, axis=(-2, -1))
        radii = radius * rng.uniform(0, 1, samples)
        return X * (radii / np.maximum(norms, 1e-300))[:, None, None]

    Q = draw(q_max)
    dQ = draw(dq_max)
    num = np.linalg.norm(p_of(Q + dQ, params) - p_of(Q, params), axis=(-2, -1))
    den = np.linalg.norm(dQ, axis=(-2, -1))
    keep = den > 0
    return num[keep] / den[keep]


def lipschitz_growth(rng, dim: int, samples: int):
    """Largest difference quotient of ``P`` over ``samples`` and ``10 * samples`` pairs."""
    params = ModelParams(dt=1.0, dim=dim)
    small = float(np.max(_lipschitz_ratios(rng, params, samples)))
    large = float(np.max(_lipschitz_ratios(rng, params, 10 * samples)))
    return small, large


def check_lipschitz(rng, ops=None, samples=20_000) -> PropertyResult:
    """Difference quotients of ``P`` stay bounded as the sample grows."""
    parts, ok = [], True
    for dim in (2, 3):
        small, large = lipschitz_growth(rng, dim, samples)
        growth = large / small - 1.0
        ok &= math.isfinite(large) and growth < 0.05
        parts.append(f"{dim}D {small:.4g} -> {large:.4g} ({growth:+.2%})")
    return PropertyResult("P Lipschitz bound", ok, ", ".join(parts))


def check_stationarity(rng, ops=None, steps=10) -> PropertyResult:
    """A zero field stays exactly zero and ``r`` stays at ``r(0)``."""
    grid = GridSpec(dim=2, n_interior=8, side=1.0)
    params = ModelParams(dt=0.01)
    Q = np.zeros(grid.padded_shape + (2, 2))
    r0 = math.sqrt(2 * params.A0)
    state = SchemeState.start(grid, params, Q, np.full(grid.padded_shape, r0))
    for _ in range(steps):
        state, _ = step(state)
    ok = not np.any(state.q) and bool(np.all(state.r == r0))
    return PropertyResult("zero field stationarity", ok, f"max |Q| {np.max(np.abs(state.q)):.1e}")


_BATTERY = (
    check_sbp_forward_backward,
    check_sbp_central,
    check_laplacian_green,
    check_alpha_divergence,
    check_alpha_structure,
    check_linearity,
    check_operator_spd,
    check_energy_identity,
    check_structure_preservation,
    check_lipschitz,
    check_stationarity,
)


def run_battery(seed: int = 0, faults: Iterable[str] = ()) -> List[PropertyResult]:
    ops = operators(faults)
    results = []
    for k, check in enumerate(_BATTERY):
        # one stream per check, so results do not depend on execution order
        rng = np.random.default_rng([seed, k])
        results.append(check(rng, ops))
    return results
