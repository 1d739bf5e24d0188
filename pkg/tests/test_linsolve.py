import numpy as np
import pytest

from qtensor_fd.errors import ConvergenceError, InputValidationError, SPDViolationError
from qtensor_fd.fields import GridSpec, laplacian_h, zero_boundary
from qtensor_fd.linsolve import (
    SolverConfig,
    cg_solve,
    default_max_iterations,
    dense_assemble,
    direct_solve,
    sym_tracefree_basis,
)
from qtensor_fd.verify import random_tensor_field


def _shifted_laplacian(grid, shift=10.0):
    return lambda X: zero_boundary(shift * X - laplacian_h(X, grid), grid)


@pytest.mark.parametrize("dim", [2, 3])
def test_basis_is_orthonormal_symmetric_tracefree(dim):
    B = sym_tracefree_basis(dim)
    assert B.shape == (dim * (dim + 1) // 2 - 1, dim, dim)
    gram = np.einsum("kij,lij->kl", B, B)
    np.testing.assert_allclose(gram, np.eye(len(B)), atol=1e-15)
    np.testing.assert_allclose(B, np.swapaxes(B, -1, -2))
    np.testing.assert_allclose(np.trace(B, axis1=-2, axis2=-1), 0, atol=1e-15)


@pytest.mark.parametrize("precond", ["jacobi", "none"])
def test_cg_matches_direct_solve(small_grid, rng, precond):
    op = _shifted_laplacian(small_grid)
    A, flatten, unflatten = dense_assemble(op, small_grid)
    b = random_tensor_field(small_grid, rng)
    diag = np.full(small_grid.padded_shape, 10.0 + 2 * small_grid.dim / small_grid.h ** 2)
    res = cg_solve(op, b, np.zeros_like(b), small_grid, SolverConfig(rel_tolerance=1e-13, preconditioner=precond), diag=diag)
    x_ref = unflatten(direct_solve(A, flatten(b)))
    np.testing.assert_allclose(res.x, x_ref, atol=1e-11 * np.max(np.abs(x_ref)))
    assert res.residual <= 1e-13
    assert res.residual_history[0] == 1.0 and len(res.residual_history) == res.iterations + 1
    x, iters, r = res
    assert iters == res.iterations


def test_zero_rhs_returns_zero(small_grid):
    op = _shifted_laplacian(small_grid)
    b = np.zeros(small_grid.padded_shape + (small_grid.dim,) * 2)
    res = cg_solve(op, b, np.ones_like(b), small_grid)
    assert res.iterations == 0 and not np.any(res.x)


def test_indefinite_operator_is_rejected(small_grid, rng):
    op = lambda X: -X  # noqa: E731
    b = random_tensor_field(small_grid, rng)
    with pytest.raises(SPDViolationError):
        cg_solve(op, b, np.zeros_like(b), small_grid, SolverConfig(preconditioner="none"))


def test_iteration_cap_raises(rng):
    g = GridSpec(dim=2, n_interior=12)
    op = _shifted_laplacian(g, shift=0.0)
    b = random_tensor_field(g, rng)
    with pytest.raises(ConvergenceError) as exc:
        cg_solve(op, b, np.zeros_like(b), g, SolverConfig(rel_tolerance=1e-14, max_iterations=2, preconditioner="none"))
    assert exc.value.iterations == 2 and exc.value.residual > 1e-14


@pytest.mark.parametrize("kw", [dict(rel_tolerance=0.0), dict(rel_tolerance=1.0), dict(max_iterations=0), dict(preconditioner="ilu")])
def test_solver_config_validation(kw):
    with pytest.raises(InputValidationError):
        SolverConfig(**kw)


def test_default_iteration_cap():
    assert default_max_iterations(100) == 500
    assert default_max_iterations(10 ** 6) == 10_000


def test_dense_assembly_limits():
    with pytest.raises(InputValidationError):
        dense_assemble(lambda X: X, GridSpec(dim=2, n_interior=7))
    with pytest.raises(InputValidationError):
        direct_solve(np.zeros((2, 2)), np.ones(2))
