"""Matrix-free preconditioned conjugate gradients on padded grid fields.

The operator is any callable mapping a padded field to a padded field of the
same shape.  Iterates live on interior nodes only; boundary and ghost
entries stay zero throughout.  Inner products are the h-weighted ones from
:mod:`qtensor_fd.fields`, so tolerances do not depend on the grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, InputValidationError, SPDViolationError
from .fields import GridSpec, inner_h, zero_boundary

log = logging.getLogger(__name__)

__all__ = [
    "SolverConfig",
    "CGResult",
    "cg_solve",
    "default_max_iterations",
    "sym_tracefree_basis",
    "dense_assemble",
    "direct_solve",
    "MAX_DENSE_INTERIOR",
]

MAX_DENSE_INTERIOR = 6


def default_max_iterations(n_unknowns: int) -> int:
    return max(500, int(10 * np.sqrt(n_unknowns)))


@dataclass(frozen=True)
class SolverConfig:
    rel_tolerance: float = 1e-10
    max_iterations: Optional[int] = None
    preconditioner: str = "jacobi"

    def __post_init__(self):
        if not 0 < self.rel_tolerance < 1:
            raise InputValidationError(f"rel_tolerance must lie in (0, 1), got {self.rel_tolerance}")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise InputValidationError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.preconditioner not in ("none", "jacobi"):
            raise InputValidationError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float  # relative, ||A x - b||_h / ||b||_h
    residual_history: list

    def __iter__(self):
        # allows ``x, iters, res = cg_solve(...)``
        return iter((self.x, self.iterations, self.residual))


def cg_solve(
    apply: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    x0: np.ndarray,
    grid: GridSpec,
    cfg: SolverConfig = SolverConfig(),
    diag: Optional[np.ndarray] = None,
) -> CGResult:
    """Solve ``apply(x) = rhs`` by (Jacobi-)preconditioned CG.

    ``diag`` is a per-node scalar approximation of the operator diagonal,
    shaped like the spatial part of the grid; it is used when
    ``cfg.preconditioner == 'jacobi'``.  A per-node scalar keeps the
    iterates inside any pointwise-invariant subspace of the operator
    (e.g. symmetric trace-free tensors).
    """
    ip = lambda u, v: inner_h(u, v, grid)  # noqa: E731
    b_norm = np.sqrt(ip(rhs, rhs))
    n_unknowns = int(np.prod([grid.n_interior] * grid.dim)) * int(np.prod(rhs.shape[grid.dim:]))
    max_it = cfg.max_iterations or default_max_iterations(n_unknowns)

    x = zero_boundary(np.array(x0, dtype=float, copy=True), grid)
    if b_norm == 0.0:
        # SPD operator: the unique solution of a zero right-hand side is zero
        return CGResult(np.zeros_like(x), 0, 0.0, [0.0])

    if cfg.preconditioner == "jacobi" and diag is not None:
        inv_d = 1.0 / diag
        inv_d = inv_d.reshape(inv_d.shape + (1,) * (rhs.ndim - grid.dim))
        precond = lambda r: r * inv_d  # noqa: E731
    else:
        precond = lambda r: r  # noqa: E731

    r = zero_boundary(rhs - apply(x), grid)
    res = np.sqrt(ip(r, r)) / b_norm
    history = [res]
    if res <= cfg.rel_tolerance:
        return CGResult(x, 0, res, history)

    z = precond(r)
    p = z.copy()
    rz = ip(r, z)
    best = res
    for k in range(1, max_it + 1):
        Ap = apply(p)
        pAp = ip(p, Ap)
        if not pAp > 0:
            raise SPDViolationError(
                f"non-positive curvature <p, A p>_h = {pAp:.3e} at CG iteration {k}"
            )
        step = rz / pAp
        x += step * p
        r -= step * Ap
        res = np.sqrt(ip(r, r)) / b_norm
        history.append(res)
        if res > 1.1 * best:
            log.warning("CG residual grew from %.3e to %.3e at iteration %d", best, res, k)
        best = min(best, res)
        if res <= cfg.rel_tolerance:
            return CGResult(x, k, res, history)
        z = precond(r)
        rz_new = ip(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"CG did not reach relative residual {cfg.rel_tolerance:.1e} in {max_it} iterations "
        f"(last {res:.3e})",
        iterations=max_it,
        residual=res,
    )


def sym_tracefree_basis(dim: int) -> np.ndarray:
    """Frobenius-orthonormal basis of symmetric trace-free ``dim x dim`` matrices.

    Returned as an array of shape ``(k, dim, dim)`` with ``k = dim(dim+1)/2 - 1``.
    """
    basis = []
    for i in range(dim - 1):
        # diagonal part: Gram-Schmidt-free choice of orthonormal trace-free diagonals
        v = np.zeros(dim)
        v[: i + 1] = 1.0
        v[i + 1] = -(i + 1)
        basis.append(np.diag(v / np.linalg.norm(v)))
    for i in range(dim):
        for j in range(i + 1, dim):
            E = np.zeros((dim, dim))
            E[i, j] = E[j, i] = 1.0 / np.sqrt(2.0)
            basis.append(E)
    return np.array(basis)


def _interior_index(grid: GridSpec):
    return np.array(list(np.ndindex(*(grid.n_interior,) * grid.dim))) + 2


def dense_assemble(apply: Callable[[np.ndarray], np.ndarray], grid: GridSpec, basis=None):
    """Columns ``apply(e_i)`` for unit basis fields over interior unknowns.

    Unknowns are ordered node-major (row-major over interior nodes), then by
    basis element.  ``basis`` defaults to the orthonormal symmetric
    trace-free basis, so the matrix is the operator restricted to that
    subspace.  Returns ``(matrix, flatten, unflatten)``.
    """
    if grid.n_interior > MAX_DENSE_INTERIOR:
        raise InputValidationError(
            f"dense assembly limited to {MAX_DENSE_INTERIOR} interior nodes per axis, "
            f"got {grid.n_interior}"
        )
    if basis is None:
        basis = sym_tracefree_basis(grid.dim)
    basis = np.asarray(basis, dtype=float)
    k = basis.shape[0]
    nodes = _interior_index(grid)
    n = len(nodes) * k
    value_shape = basis.shape[1:]
    flat_basis = basis.reshape(k, -1)

    def flatten(field: np.ndarray) -> np.ndarray:
        vals = field[tuple(nodes.T)].reshape(len(nodes), -1)
        return (vals @ flat_basis.T).reshape(n)

    def unflatten(vec: np.ndarray) -> np.ndarray:
        out = np.zeros(grid.padded_shape + value_shape)
        coef = np.asarray(vec).reshape(len(nodes), k)
        out[tuple(nodes.T)] = (coef @ flat_basis).reshape((len(nodes),) + value_shape)
        return out

    A = np.empty((n, n))
    e = np.zeros(n)
    for col in range(n):
        e[col] = 1.0
        A[:, col] = flatten(apply(unflatten(e)))
        e[col] = 0.0
    return A, flatten, unflatten


def direct_solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """LU solve of a small dense system; raises on a singular matrix."""
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            x = scipy.linalg.solve(matrix, rhs, check_finite=True)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise InputValidationError(f"direct solve failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        # scipy's diagonal shortcut divides by zero instead of raising
        raise InputValidationError("direct solve failed: singular matrix")
    return x
