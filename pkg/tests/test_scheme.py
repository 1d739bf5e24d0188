import math

import numpy as np
import pytest

from oracles import kron_step_matrix
from qtensor_fd.errors import ConvergenceError, IntegrityError
from qtensor_fd.fields import GridSpec, inner_h, zero_boundary
from qtensor_fd.linsolve import SolverConfig, dense_assemble, sym_tracefree_basis
from qtensor_fd.potential import ModelParams, p_of, r_of
from qtensor_fd.scheme import (
    REPORT_COLUMNS,
    SchemeState,
    apply_A,
    build_F,
    chemical_potential,
    energy,
    step,
)
from qtensor_fd.verify import random_tensor_field


def _params(dim, **kw):
    base = dict(dt=0.1, dim=dim, L1=0.01, L2=0.004 if dim == 3 else 0.0, L3=0.002 if dim == 3 else 0.0)
    base.update(kw)
    return ModelParams(**base)


def _state(grid, params, rng, scale=0.3):
    Q = random_tensor_field(grid, rng, scale=scale)
    r = np.full(grid.padded_shape, math.sqrt(2 * params.A0))
    r[grid.interior] = r_of(Q[grid.interior], params)
    return SchemeState.start(grid, params, Q, r)


def _unit_basis(d):
    return np.eye(d * d).reshape(d * d, d, d)


@pytest.mark.parametrize("dim,n", [(2, 4), (3, 3)])
def test_apply_A_matches_kronecker_assembly(rng, dim, n):
    grid = GridSpec(dim=dim, n_interior=n)
    params = _params(dim)
    pb = p_of(random_tensor_field(grid, rng, scale=0.5), params)
    A, _, _ = dense_assemble(lambda X: apply_A(X, pb, grid, params), grid, basis=_unit_basis(dim))
    K = kron_step_matrix(pb, grid, params)
    assert np.max(np.abs(A - K)) <= 1e-13 * max(1.0, np.max(np.abs(K)))


def test_mixed_term_enters_with_2d_generic_stencil(rng):
    grid = GridSpec(dim=2, n_interior=4)
    params = _params(2, L2=0.01, L3=0.02)
    pb = p_of(random_tensor_field(grid, rng, scale=0.5), params)
    A, _, _ = dense_assemble(lambda X: apply_A(X, pb, grid, params), grid, basis=_unit_basis(2))
    np.testing.assert_allclose(A, kron_step_matrix(pb, grid, params), rtol=0, atol=1e-12)


@pytest.mark.parametrize("dim,n", [(2, 4), (3, 3)])
def test_operator_spd_on_symmetric_tracefree_subspace(rng, dim, n):
    grid = GridSpec(dim=dim, n_interior=n)
    params = _params(dim)
    pb = p_of(random_tensor_field(grid, rng, scale=2.0), params)
    A, _, _ = dense_assemble(lambda X: apply_A(X, pb, grid, params), grid)
    np.testing.assert_allclose(A, A.T, rtol=0, atol=1e-13 * np.max(np.abs(A)))
    # the quadratic form dominates |X|^2 / dt
    assert np.linalg.eigvalsh(A)[0] >= 1 / params.dt * (1 - 1e-12)


@pytest.mark.parametrize("dim,n", [(2, 4), (3, 3)])
def test_right_hand_side(rng, dim, n):
    # F(Q) = 2 Q/dt - A(Q) + M (P:Q) P - M r P, read off the assembled matrix
    grid = GridSpec(dim=dim, n_interior=n)
    params = _params(dim)
    state = _state(grid, params, rng)
    pb = p_of(random_tensor_field(grid, rng, scale=0.5), params)
    K = kron_step_matrix(pb, grid, params)
    _, flatten, unflatten = dense_assemble(lambda X: X, grid, basis=_unit_basis(dim))
    q = flatten(state.q)
    pdotq = np.einsum("...ij,...ij->...", pb, state.q)
    extra = params.M * (pdotq - state.r)[..., None, None] * pb
    expected = unflatten(2 * q / params.dt - K @ q) + zero_boundary(extra, grid)
    np.testing.assert_allclose(build_F(state, pb), expected, rtol=0, atol=1e-11)


@pytest.mark.parametrize("dim,n", [(2, 4), (3, 3)])
def test_step_matches_dense_solve(rng, dim, n):
    grid = GridSpec(dim=dim, n_interior=n)
    params = _params(dim)
    state = _state(grid, params, rng)
    new, rep = step(state, SolverConfig(rel_tolerance=1e-13))
    pb = p_of(state.q, params)  # first step: no previous level, extrapolant is Q^0
    K = kron_step_matrix(pb, grid, params)
    _, flatten, unflatten = dense_assemble(lambda X: X, grid, basis=_unit_basis(dim))
    q_ref = unflatten(np.linalg.solve(K, flatten(build_F(state, pb))))
    np.testing.assert_allclose(new.q, q_ref, rtol=0, atol=1e-11)
    r_ref = state.r + np.einsum("...ij,...ij->...", pb, new.q - state.q)
    np.testing.assert_allclose(new.r, r_ref, rtol=1e-14)
    assert new.n == 1 and new.q_prev is state.q


def test_second_step_uses_extrapolation(rng):
    grid = GridSpec(dim=2, n_interior=4)
    params = _params(2)
    s1, _ = step(_state(grid, params, rng), SolverConfig(rel_tolerance=1e-13))
    s2, _ = step(s1, SolverConfig(rel_tolerance=1e-13))
    pb = p_of(1.5 * s1.q - 0.5 * s1.q_prev, params)
    np.testing.assert_allclose(s2.r, s1.r + np.einsum("...ij,...ij->...", pb, s2.q - s1.q), rtol=1e-14)


@pytest.mark.parametrize("dim,n", [(2, 8), (3, 5)])
def test_energy_identity_and_residual_bound(rng, dim, n):
    grid = GridSpec(dim=dim, n_interior=n)
    params = _params(dim, dt=0.01)
    state = _state(grid, params, rng, scale=0.2)
    E0 = energy(state.q, state.r, grid, params)
    for _ in range(10):
        pb = p_of(1.5 * state.q - 0.5 * state.q_prev, params)
        old = state
        state, rep = step(state, SolverConfig(rel_tolerance=1e-6))
        assert rep.energy_after <= rep.energy_before + abs(rep.dissipation_residual)
        # the residual is exactly -dt <A(Q^{n+1}) - F, H>
        H = chemical_potential(state.q, old.q, state.r, old.r, pb, grid, params)
        rho = apply_A(state.q, pb, grid, params) - build_F(old, pb)
        assert rep.dissipation_residual == pytest.approx(-params.dt * inner_h(rho, H, grid), abs=1e-12 * E0)
        assert abs(rep.dissipation_residual) <= rep.residual_bound + 1e-12 * E0
        assert rep.residual_estimate <= rep.residual_bound * (1 + 1e-9)


def test_zero_state_is_stationary():
    grid = GridSpec(dim=3, n_interior=4)
    params = _params(3, dt=0.01)
    r0 = math.sqrt(2 * params.A0)
    state = SchemeState.start(grid, params, np.zeros(grid.padded_shape + (3, 3)), np.full(grid.padded_shape, r0))
    for _ in range(5):
        state, rep = step(state)
    assert not np.any(state.q) and np.all(state.r == r0)
    assert rep.solver_iterations == 0 and rep.dissipation_residual == 0.0


def test_asymmetric_state_trips_integrity_check(rng):
    grid = GridSpec(dim=2, n_interior=5)
    params = _params(2)
    state = _state(grid, params, rng)
    state.q[4, 3, 0, 1] += 1e-3
    with pytest.raises(IntegrityError) as exc:
        step(state)
    assert exc.value.step == 1 and exc.value.node == (3, 2)
    step(state, check_integrity=False)


def test_solver_failure_carries_step(rng):
    grid = GridSpec(dim=2, n_interior=6)
    params = _params(2)
    state = _state(grid, params, rng)
    state, _ = step(state)
    with pytest.raises(ConvergenceError) as exc:
        step(state, SolverConfig(rel_tolerance=1e-15, max_iterations=1, preconditioner="none"))
    assert exc.value.step == 1


def test_state_validation(rng):
    grid = GridSpec(dim=2, n_interior=3)
    Q = np.zeros(grid.padded_shape + (2, 2))
    with pytest.raises(ValueError):
        SchemeState(grid, _params(3), Q, Q, np.ones(grid.padded_shape))
    with pytest.raises(IntegrityError):
        SchemeState(grid, _params(2), Q, Q, np.zeros(grid.padded_shape))


def test_report_row_layout(rng):
    grid = GridSpec(dim=2, n_interior=4)
    _, rep = step(_state(grid, _params(2), rng))
    row = rep.csv_row()
    assert len(row) == len(REPORT_COLUMNS) == 8
    assert row[0] == 1 and row[1] == pytest.approx(0.1)
    assert row[2] == rep.energy_after and row[6] == rep.solver_iterations


def test_basis_restriction_agrees_with_full_matrix(rng):
    grid = GridSpec(dim=3, n_interior=2)
    params = _params(3)
    pb = p_of(random_tensor_field(grid, rng), params)
    A_sub, flatten, _ = dense_assemble(lambda X: apply_A(X, pb, grid, params), grid)
    K = kron_step_matrix(pb, grid, params)
    B = sym_tracefree_basis(3).reshape(5, 9)
    n_nodes = 8
    T = np.kron(np.eye(n_nodes), B)
    np.testing.assert_allclose(A_sub, T @ K @ T.T, rtol=0, atol=1e-12)
