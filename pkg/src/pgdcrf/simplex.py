"""Euclidean projection onto the probability simplex and its leaky variant.

The threshold ``t`` comes from a sort-and-scan search: sort ascending, and
walk ``k`` down from ``L-1`` until the mean excess of the top ``L-k``
entries is at least the ``k``-th smallest. The strict projection is
``max(x - t, 0)``; the leaky map keeps ``alpha * (x - t)`` for entries below
the threshold instead of zeroing them.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidInputError

KINK_TOL = 1e-12
TRAIN_ALPHA = 0.01


class KinkWarning(RuntimeWarning):
    """An entry sits on the threshold, where the projection is not differentiable."""


@dataclass(frozen=True)
class ProjectionResult:
    q: np.ndarray
    threshold: float
    support: np.ndarray  # bool, entries on the pass-through branch
    k: int
    alpha: float = 0.0


@dataclass(frozen=True)
class FieldProjection:
    """Row-wise projection of an ``(N, L)`` field, retained for backprop."""

    q: np.ndarray
    pre: np.ndarray
    threshold: np.ndarray
    k: np.ndarray
    alpha: float

    def margin(self) -> float:
        """Smallest distance of any input entry from its row threshold."""
        return float(np.min(np.abs(self.pre - self.threshold[:, None]), initial=np.inf))

    def branch_signature(self) -> np.ndarray:
        return self.pre - self.threshold[:, None] >= 0

    def vjp(self, grad_out):
        """Pull a cotangent on the output back through the projection."""
        return kernels.project_rows_vjp(self.pre, self.threshold, self.k, self.alpha, grad_out)


def _as_row(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 1:
        raise InvalidInputError(f"expected a non-empty 1-D row, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("projection input must be finite")
    return x


def _check_alpha(alpha):
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError(f"alpha must lie in [0, 1], got {alpha}")


def project_row_leaky(x, alpha) -> ProjectionResult:
    x = _as_row(x)
    _check_alpha(alpha)
    out, t, k = kernels.project_rows(x[None, :], alpha)
    t = float(t[0])
    return ProjectionResult(out[0], t, x - t >= 0, int(k[0]), float(alpha))


def project_row(x) -> ProjectionResult:
    return project_row_leaky(x, 0.0)


def projection_jacobian(x, alpha=0.0) -> np.ndarray:
    """``J[lam, mu] = d f_lam / d x_mu`` of the (leaky) projection.

    Each output entry follows the branch of its own input:
    ``J = diag(c) - c d^T`` with ``c_lam`` equal to 1 on the pass-through
    branch and ``alpha`` otherwise, and ``d_mu = 1/(L-k)`` for entries
    strictly above the threshold. At a kink the pass-through branch is used
    and a ``KinkWarning`` is emitted.
    """
    res = project_row_leaky(x, alpha)
    x = np.asarray(x, dtype=np.float64)
    L = x.shape[0]
    gap = x - res.threshold
    if np.any(np.abs(gap) <= KINK_TOL):
        warnings.warn(f"projection input within {KINK_TOL} of the threshold", KinkWarning, stacklevel=2)
    c = np.where(gap >= 0, 1.0, alpha)
    d = np.where(x > res.threshold, 1.0 / (L - res.k), 0.0)
    return np.diag(c) - np.outer(c, d)


def project_field_full(qt, alpha=0.0) -> FieldProjection:
    qt = np.asarray(qt, dtype=np.float64)
    if qt.ndim != 2:
        raise InvalidInputError(f"field must be (N, L), got shape {qt.shape}")
    _check_alpha(alpha)
    bad = ~np.isfinite(qt)
    if bad.any():
        i, lam = np.argwhere(bad)[0]
        raise InvalidInputError(f"non-finite projection input at pixel {i}, label {lam}")
    out, t, k = kernels.project_rows(qt, alpha)
    return FieldProjection(out, qt, t, k, float(alpha))


def project_field(qt, alpha=0.0) -> np.ndarray:
    """Project every row of an ``(N, L)`` field independently."""
    return project_field_full(qt, alpha).q
