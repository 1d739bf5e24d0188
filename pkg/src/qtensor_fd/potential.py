"""Pointwise algebra of the Landau-de Gennes bulk potential.

All functions broadcast over leading axes: a ``(..., d, d)`` array is treated
as a stack of matrices.  Matrix powers are formed by direct products; no
eigendecompositions are used.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import InputValidationError, QuadratizationError

__all__ = [
    "ModelParams",
    "BULK_DEFAULTS",
    "tr2",
    "tr3",
    "bulk_energy",
    "r_of",
    "s_of",
    "p_of",
    "extrapolate",
    "p_bar",
]

# bulk coefficients used by the numerical examples unless overridden
BULK_DEFAULTS = {"a": -0.3, "b": -4.0, "c": 4.0, "A0": 500.0, "M": 1.0}


@dataclass(frozen=True)
class ModelParams:
    """Physical and scheme constants.

    ``L1``, ``L2``, ``L3`` are the elastic constants.  For 2D runs the
    combined constant ``L = L1 + (L2 + L3)/2`` is usually passed as ``L1``
    with ``L2 = L3 = 0`` (see :meth:`reduced_2d`).
    """

    dt: float
    dim: int = 2
    a: float = BULK_DEFAULTS["a"]
    b: float = BULK_DEFAULTS["b"]
    c: float = BULK_DEFAULTS["c"]
    A0: float = BULK_DEFAULTS["A0"]
    M: float = BULK_DEFAULTS["M"]
    L1: float = 0.001
    L2: float = 0.0
    L3: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v):
                raise InputValidationError(f"{f.name} must be finite, got {v}")
        if self.dim not in (2, 3):
            raise InputValidationError(f"dim must be 2 or 3, got {self.dim}")
        for name in ("c", "A0", "M", "L1", "dt"):
            if getattr(self, name) <= 0:
                raise InputValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.L2 + self.L3 < 0:
            raise InputValidationError(f"L2 + L3 must be non-negative, got {self.L2 + self.L3}")

    @classmethod
    def reduced_2d(cls, L: float, dt: float, **kw) -> "ModelParams":
        """2D parameters with the elastic terms folded into ``L1 = L``."""
        return cls(dt=dt, dim=2, L1=L, L2=0.0, L3=0.0, **kw)

    @property
    def L23(self) -> float:
        return self.L2 + self.L3

    def replace(self, **kw) -> "ModelParams":
        d = asdict(self)
        d.update(kw)
        return ModelParams(**d)

    def as_dict(self) -> dict:
        return asdict(self)


def tr2(Q: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...ji->...", Q, Q)


def tr3(Q: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...jk,...ki->...", Q, Q, Q)


def bulk_energy(Q, params: ModelParams):
    """``(a/2) tr(Q^2) - (b/3) tr(Q^3) + (c/4) tr(Q^2)^2``."""
    Q = np.asarray(Q, dtype=float)
    t2 = tr2(Q)
    return 0.5 * params.a * t2 - params.b / 3.0 * tr3(Q) + 0.25 * params.c * t2 * t2


def r_of(Q, params: ModelParams):
    """Auxiliary variable ``sqrt(2 (F_B(Q) + A0))``.

    Raises :class:`QuadratizationError` if the radicand is not positive
    anywhere; the error carries the index of the first offending entry.
    """
    rad = 2.0 * (bulk_energy(Q, params) + params.A0)
    bad = ~(rad > 0)
    if np.any(bad):
        node = tuple(int(i) for i in np.argwhere(np.atleast_1d(bad))[0]) if np.ndim(rad) else ()
        raise QuadratizationError(
            f"non-positive quadratization radicand {np.min(rad):.6g} at index {node}; "
            f"increase A0 (currently {params.A0})",
            node=node,
        )
    return np.sqrt(rad)


def s_of(Q, params: ModelParams) -> np.ndarray:
    """``a Q - b [Q^2 - tr(Q^2) I / d] + c tr(Q^2) Q``."""
    Q = np.asarray(Q, dtype=float)
    d = Q.shape[-1]
    Q2 = Q @ Q
    t2 = np.trace(Q2, axis1=-2, axis2=-1)[..., None, None]
    return params.a * Q - params.b * (Q2 - t2 / d * np.eye(d)) + params.c * t2 * Q


def p_of(Q, params: ModelParams) -> np.ndarray:
    """``S(Q) / r(Q)``, the derivative of ``r`` along trace-free symmetric directions."""
    Q = np.asarray(Q, dtype=float)
    return s_of(Q, params) / r_of(Q, params)[..., None, None]


def extrapolate(q_now: np.ndarray, q_prev: np.ndarray) -> np.ndarray:
    if q_now.shape != q_prev.shape:
        raise InputValidationError(f"shape mismatch: {q_now.shape} vs {q_prev.shape}")
    return 1.5 * q_now - 0.5 * q_prev


def p_bar(q_now: np.ndarray, q_prev: np.ndarray, params: ModelParams) -> np.ndarray:
    """P evaluated at the extrapolated tensor ``(3/2) Q^n - (1/2) Q^{n-1}``."""
    return p_of(extrapolate(q_now, q_prev), params)
