"""Grid geometry, padded field storage and the discrete difference operators.

Fields are plain numpy arrays.  A field on a grid with ``N`` interior nodes
per axis is stored over the node range ``-1 .. N+2`` on every axis, so the
leading ``dim`` axes of the array have length ``N + 4`` and node ``i`` lives
at array index ``i + 1``.  Trailing axes hold the per-node value:

* scalar field: ``(N+4,)*dim``
* vector field: ``(N+4,)*dim + (dim,)``
* tensor field: ``(N+4,)*dim + (dim, dim)``

Nodes ``0`` and ``N+1`` are boundary nodes, ``-1`` and ``N+2`` are ghosts.
Tensor fields hold exact zeros on both (homogeneous Dirichlet data).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import GridMismatchError, InputValidationError

__all__ = [
    "GridSpec",
    "zeros_tensor",
    "zeros_scalar",
    "zero_boundary",
    "diff",
    "laplacian_h",
    "alpha_h",
    "div_h",
    "inner_h",
    "norm_h",
    "grad_inner_h",
    "grad_norm_h",
    "set_deterministic_reductions",
    "gauss_cell_average",
    "DEFAULT_QUADRATURE_ORDER",
    "project_initial",
]

_KINDS = ("forward", "backward", "central")

# Sums in a fixed order unless switched off; BLAS dot products are faster but
# may reorder the reduction between runs.
_DETERMINISTIC = True


def set_deterministic_reductions(flag: bool) -> None:
    global _DETERMINISTIC
    _DETERMINISTIC = bool(flag)


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid on the box ``origin + [0, side]^dim``.

    ``n_interior`` is the number of interior nodes ``N`` per axis; the
    spacing is ``h = side / (N + 1)``.
    """

    dim: int
    n_interior: int
    side: float = 1.0
    origin: Optional[Tuple[float, ...]] = field(default=None)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise InputValidationError(f"dim must be 2 or 3, got {self.dim}")
        if int(self.n_interior) != self.n_interior or self.n_interior < 1:
            raise InputValidationError(f"n_interior must be a positive integer, got {self.n_interior}")
        if not (self.side > 0 and np.isfinite(self.side)):
            raise InputValidationError(f"side must be positive, got {self.side}")
        if self.origin is None:
            object.__setattr__(self, "origin", (0.0,) * self.dim)
        elif len(self.origin) != self.dim:
            raise InputValidationError("origin must have one entry per axis")
        else:
            object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @classmethod
    def from_cells(cls, dim: int, n_cells: int, side: float = 1.0, origin=None) -> "GridSpec":
        """Grid with ``n_cells`` intervals per axis, i.e. ``h = side / n_cells``."""
        return cls(dim=dim, n_interior=int(n_cells) - 1, side=side, origin=origin)

    @property
    def h(self) -> float:
        return self.side / (self.n_interior + 1)

    @property
    def n_cells(self) -> int:
        return self.n_interior + 1

    @property
    def padded_shape(self) -> Tuple[int, ...]:
        return (self.n_interior + 4,) * self.dim

    @property
    def nodes(self) -> Tuple[slice, ...]:
        """Index selecting nodes ``0 .. N+1`` of a padded array."""
        return (slice(1, -1),) * self.dim

    @property
    def interior(self) -> Tuple[slice, ...]:
        """Index selecting nodes ``1 .. N`` of a padded array."""
        return (slice(2, -2),) * self.dim

    def axis_coords(self, axis: int, padded: bool = True) -> np.ndarray:
        i = np.arange(-1, self.n_interior + 3) if padded else np.arange(0, self.n_interior + 2)
        return self.origin[axis] + i * self.h

    def coords(self, padded: bool = True):
        """Coordinate arrays (``indexing='ij'``) for every stored node."""
        return np.meshgrid(*(self.axis_coords(a, padded) for a in range(self.dim)), indexing="ij")

    def node_count(self) -> int:
        return (self.n_interior + 2) ** self.dim


def zeros_tensor(grid: GridSpec) -> np.ndarray:
    return np.zeros(grid.padded_shape + (grid.dim, grid.dim))


def zeros_scalar(grid: GridSpec) -> np.ndarray:
    return np.zeros(grid.padded_shape)


def _check_field(f: np.ndarray, grid: GridSpec) -> None:
    if f.shape[: grid.dim] != grid.padded_shape:
        raise GridMismatchError(
            f"field with spatial shape {f.shape[:grid.dim]} does not live on a grid "
            f"with padded shape {grid.padded_shape}"
        )


def zero_boundary(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Zero boundary and ghost nodes of ``f`` in place and return it."""
    for axis in range(grid.dim):
        idx = [slice(None)] * f.ndim
        idx[axis] = [0, 1, -2, -1]
        f[tuple(idx)] = 0.0
    return f


def _shifted(f: np.ndarray, grid: GridSpec, axis: int, k: int) -> np.ndarray:
    # values at nodes (0..N+1) + k*e_axis; the other axes keep nodes 0..N+1
    n = grid.n_interior
    idx = [slice(1, n + 3)] * grid.dim
    idx[axis] = slice(1 + k, n + 3 + k)
    return f[tuple(idx)]


def _check_axis(axis: int, grid: GridSpec) -> int:
    if not isinstance(axis, (int, np.integer)) or not 1 <= axis <= grid.dim:
        raise GridMismatchError(f"axis must be in 1..{grid.dim}, got {axis!r}")
    return int(axis) - 1


def diff(f: np.ndarray, grid: GridSpec, axis: int, kind: str) -> np.ndarray:
    """Forward, backward or central difference along ``axis`` (1-based).

    Values are produced at nodes ``0 .. N+1``; ghost entries of the result
    are zero.  Works componentwise on any trailing value shape.
    """
    _check_field(f, grid)
    a = _check_axis(axis, grid)
    h = grid.h
    out = np.zeros_like(f)
    if kind == "forward":
        vals = (_shifted(f, grid, a, 1) - _shifted(f, grid, a, 0)) / h
    elif kind == "backward":
        vals = (_shifted(f, grid, a, 0) - _shifted(f, grid, a, -1)) / h
    elif kind == "central":
        vals = (_shifted(f, grid, a, 1) - _shifted(f, grid, a, -1)) / (2 * h)
    else:
        raise GridMismatchError(f"kind must be one of {_KINDS}, got {kind!r}")
    out[grid.nodes] = vals
    return out


def laplacian_h(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Sum of ``D^-_a D^+_a f`` over axes, on interior nodes; zero elsewhere."""
    _check_field(f, grid)
    h2 = grid.h ** 2
    centre = _shifted(f, grid, 0, 0)
    acc = -2.0 * grid.dim * centre
    for a in range(grid.dim):
        acc = acc + _shifted(f, grid, a, 1) + _shifted(f, grid, a, -1)
    out = np.zeros_like(f)
    out[grid.nodes] = acc / h2
    return zero_boundary(out, grid)


def _row_divergence(Q: np.ndarray, grid: GridSpec) -> np.ndarray:
    # v_s = sum_b D^c_b Q_{s b}, at nodes 0..N+1
    v = np.zeros(Q.shape[:-1])
    for b in range(grid.dim):
        v += diff(Q[..., :, b], grid, b + 1, "central")
    return v


def alpha_h(Q: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Central-difference discretisation of the mixed second-derivative term.

    ``(alpha_h Q)_ws = sum_b [D^c_w D^c_b Q_sb + D^c_s D^c_b Q_wb]
    - (2/d) delta_ws sum_{b,g} D^c_b D^c_g Q_bg`` on interior nodes.  The
    result is trace-free for any input and symmetric for symmetric input.
    """
    _check_field(Q, grid)
    d = grid.dim
    v = _row_divergence(Q, grid)
    # grads[..., w, s] = D^c_w v_s
    grads = np.stack([diff(v, grid, w + 1, "central") for w in range(d)], axis=-2)
    out = grads + np.swapaxes(grads, -1, -2)
    div_v = np.trace(grads, axis1=-2, axis2=-1)
    out -= (2.0 / d) * div_v[..., None, None] * np.eye(d)
    return zero_boundary(out, grid)


def div_h(Q: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Column divergence ``(div_h Q)_b = sum_a D^c_a Q_ab`` at nodes 0..N+1.

    Boundary nodes carry the one-sided value produced by the zero ghost
    layer; the summation-by-parts identities need those entries.
    """
    _check_field(Q, grid)
    out = np.zeros(Q.shape[:-1])
    for a in range(grid.dim):
        out += diff(Q[..., a, :], grid, a + 1, "central")
    return out


def _dot(a: np.ndarray, b: np.ndarray) -> float:
    if _DETERMINISTIC:
        return float(np.sum(np.ascontiguousarray(a) * np.ascontiguousarray(b)))
    return float(np.vdot(a, b))


def inner_h(A: np.ndarray, B: np.ndarray, grid: GridSpec) -> float:
    """``h^d`` times the sum of ``A:B`` over nodes 0..N+1."""
    _check_field(A, grid)
    _check_field(B, grid)
    if A.shape != B.shape:
        raise GridMismatchError(f"shape mismatch: {A.shape} vs {B.shape}")
    return grid.h ** grid.dim * _dot(A[grid.nodes], B[grid.nodes])


def norm_h(A: np.ndarray, grid: GridSpec) -> float:
    return float(np.sqrt(inner_h(A, A, grid)))


def grad_inner_h(A: np.ndarray, B: np.ndarray, grid: GridSpec) -> float:
    """``<grad_h A, grad_h B>_h`` built from backward differences."""
    return sum(
        inner_h(diff(A, grid, m, "backward"), diff(B, grid, m, "backward"), grid)
        for m in range(1, grid.dim + 1)
    )


def grad_norm_h(A: np.ndarray, grid: GridSpec) -> float:
    return float(np.sqrt(grad_inner_h(A, A, grid)))


def _gauss_points(grid: GridSpec, order: int):
    # coordinate arrays of shape (N,)*d + (order,)*d and matching weights
    xi, w = np.polynomial.legendre.leggauss(order)
    h, n, d = grid.h, grid.n_interior, grid.dim
    coords = []
    for a in range(d):
        pts = (grid.origin[a] + np.arange(1, n + 1) * h)[:, None] + 0.5 * h * xi[None, :]
        shape = [1] * (2 * d)
        shape[a] = n
        shape[d + a] = order
        coords.append(np.broadcast_to(pts.reshape(shape), (n,) * d + (order,) * d))
    weights = np.ones((order,) * d)
    for a in range(d):
        shape = [1] * d
        shape[a] = order
        weights = weights * (0.5 * w).reshape(shape)
    return coords, weights


def _average(vals: np.ndarray, weights: np.ndarray, d: int) -> np.ndarray:
    spatial, quad = "abc"[:d], "ijk"[:d]
    avg = np.einsum(f"{spatial}{quad}...,{quad}->{spatial}...", vals, weights)
    # the weights do not sum to exactly 1 in floating point; keep constant cells exact
    first = vals[(slice(None),) * d + (0,) * d]
    const = np.all(vals == first[(slice(None),) * d + (None,) * d], axis=tuple(range(d, 2 * d)))
    return np.where(const, first, avg)


# points per axis; three already beat second order, six make the projection
# agree with a converged quadrature to ~1e-12 on the smooth benchmark data
DEFAULT_QUADRATURE_ORDER = 6


def gauss_cell_average(func: Callable, grid: GridSpec, order: int = DEFAULT_QUADRATURE_ORDER) -> np.ndarray:
    """Average ``func`` over the h-cube centred on each interior node.

    ``func`` receives ``dim`` coordinate arrays and must return an array whose
    leading axes match them.  Tensor-product Gauss-Legendre with ``order``
    points per axis.  Returns values for nodes ``1 .. N`` only.
    """
    coords, weights = _gauss_points(grid, order)
    return _average(np.asarray(func(*coords), dtype=float), weights, grid.dim)


def project_initial(q0: Callable, grid: GridSpec, params, order: int = DEFAULT_QUADRATURE_ORDER, tol: float = 1e-12):
    """Cell-average initial data onto the grid.

    Returns ``(Q0, r0)`` as padded arrays.  ``r0`` is the cell average of
    ``r(Q0(x))``; boundary and ghost entries of ``r0`` hold ``r(0)``.
    """
    from .potential import r_of

    coords, weights = _gauss_points(grid, order)
    vals = np.asarray(q0(*coords), dtype=float)
    if vals.shape[-2:] != (grid.dim, grid.dim):
        raise InputValidationError(f"initial data must return {grid.dim}x{grid.dim} matrices")
    asym = np.max(np.abs(vals - np.swapaxes(vals, -1, -2)), initial=0.0)
    tr = np.max(np.abs(np.trace(vals, axis1=-2, axis2=-1)), initial=0.0)
    if asym > tol or tr > tol:
        raise InputValidationError(
            f"initial data not symmetric trace-free (asymmetry {asym:.3e}, trace {tr:.3e})"
        )
    Q = zeros_tensor(grid)
    Q[grid.interior] = _average(vals, weights, grid.dim)
    r = np.full(grid.padded_shape, np.sqrt(2.0 * params.A0))
    r[grid.interior] = _average(r_of(vals, params), weights, grid.dim)
    return Q, r
