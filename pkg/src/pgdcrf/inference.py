"""Projected gradient descent, the mean-field baseline and multilinear rounding."""

import logging
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import kernels
from .errors import DivergenceError, InvalidInputError
from .filters import bilateral_response, pairwise_response, spatial_response  # noqa: F401
from .lattice import build_feature_lattice  # noqa: F401
from .model import CrfInstance, check_relaxed, energy_relaxed, step_size_bound
from .simplex import FieldProjection, project_field_full

log = logging.getLogger(__name__)

DIVERGENCE_TOL = 1e-6
MF_FLOOR = 1e-20


@dataclass(frozen=True)
class InferenceConfig:
    iterations: int = 5
    step: float = 0.5
    alpha: float = 0.0
    safe_step: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise InvalidInputError("iterations must be non-negative")
        if not self.step >= 0:
            raise InvalidInputError("step size must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidInputError("alpha must lie in [0, 1]")


@dataclass
class InferenceTrace:
    method: str
    states: List[np.ndarray]
    energies: List[float]
    kl: List[Optional[float]] = field(default_factory=list)
    projections: List[FieldProjection] = field(default_factory=list)
    step: Optional[float] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1


def energy_gradient(inst: CrfInstance, q) -> np.ndarray:
    """Exact gradient of the relaxed energy for symmetric banks.

    Every unordered pair appears twice in the ordered edge set, so the
    pairwise part of the gradient is twice the filter response.
    """
    q = np.asarray(q, dtype=np.float64)
    return inst.unary.values + 2.0 * pairwise_response(inst, q)


def effective_step(inst: CrfInstance, config: InferenceConfig) -> float:
    if config.safe_step:
        return min(config.step, step_size_bound(inst))
    return config.step


def pgd_step_full(q, inst: CrfInstance, step: float, alpha: float) -> FieldProjection:
    q = np.asarray(q, dtype=np.float64)
    return project_field_full(q - step * energy_gradient(inst, q), alpha)


def pgd_step(q, inst: CrfInstance, config: InferenceConfig) -> np.ndarray:
    """One gradient step followed by a row-wise simplex projection."""
    return pgd_step_full(q, inst, effective_step(inst, config), config.alpha).q


def kl_objective(inst: CrfInstance, q) -> Optional[float]:
    """Mean-field free energy ``E(q) - H(q)`` (``0 log 0 = 0``)."""
    q = np.asarray(q, dtype=np.float64)
    if np.any(q < 0):
        raise InvalidInputError("entropy needs non-negative q")
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(q > 0, q * np.log(q), 0.0)
    return energy_relaxed(inst, q) + float(plogp.sum())


def _kl_or_none(inst, q):
    return kl_objective(inst, q) if np.all(q >= 0) else None


def _checked_energy(inst, q, t, method):
    e = energy_relaxed(inst, q)
    if not np.isfinite(e):
        raise DivergenceError(f"{method}: non-finite energy at iteration {t}")
    return e


def init_q0(z) -> np.ndarray:
    """Initial state from unary scores; rows off the simplex are renormalised."""
    z = np.array(z, dtype=np.float64)
    if z.ndim != 2 or np.any(z < 0) or not np.all(np.isfinite(z)):
        raise InvalidInputError("scores must be a finite non-negative (N, L) array")
    sums = z.sum(axis=1)
    if np.any(sums <= 0):
        raise InvalidInputError("a score row sums to zero")
    off = np.abs(sums - 1.0) > 1e-6
    if off.any():
        warnings.warn(f"renormalising {int(off.sum())} score rows that do not sum to one", RuntimeWarning, stacklevel=2)
        z[off] /= sums[off, None]
    return z


def run_pgd(inst: CrfInstance, q0, config: InferenceConfig = InferenceConfig(), record_kl=True) -> InferenceTrace:
    q = check_relaxed(inst, q0, strict=True, tol=1e-6)
    step = effective_step(inst, config)
    states = [q.copy()]
    energies = [_checked_energy(inst, q, 0, "pgd")]
    kl = [_kl_or_none(inst, q)] if record_kl else []
    trace = InferenceTrace("pgd", states, energies, kl, [], step)
    for t in range(config.iterations):
        proj = pgd_step_full(q, inst, step, config.alpha)
        q = proj.q
        e = _checked_energy(inst, q, t + 1, "pgd")
        if not config.safe_step and e > energies[-1] + DIVERGENCE_TOL:
            msg = f"energy rose from {energies[-1]:.6g} to {e:.6g} at iteration {t + 1}"
            log.warning(msg)
            trace.warnings.append(msg)
        trace.projections.append(proj)
        states.append(q)
        energies.append(e)
        if record_kl:
            kl.append(_kl_or_none(inst, q))
    return trace


def mean_field_step(q, inst: CrfInstance) -> np.ndarray:
    """Parallel fixed-point update ``q <- softmax(-dE/dq)`` for every pixel."""
    q = np.maximum(np.asarray(q, dtype=np.float64), MF_FLOOR)
    g = energy_gradient(inst, q)
    g = g - g.min(axis=1, keepdims=True)
    e = np.exp(-g)
    return e / e.sum(axis=1, keepdims=True)


def run_mean_field(inst: CrfInstance, q0, iterations=5) -> InferenceTrace:
    q = check_relaxed(inst, q0, strict=True, tol=1e-6)
    states = [q.copy()]
    energies = [_checked_energy(inst, q, 0, "mean-field")]
    kl = [kl_objective(inst, q)]
    for t in range(iterations):
        q = mean_field_step(q, inst)
        states.append(q)
        energies.append(_checked_energy(inst, q, t + 1, "mean-field"))
        kl.append(kl_objective(inst, q))
    return InferenceTrace("mean-field", states, energies, kl)


def round_sequential(inst: CrfInstance, q, order=None) -> np.ndarray:
    """Fix one pixel at a time to the label that minimises the partially rounded energy.

    Because the relaxed energy is affine in each pixel's row, the chosen
    label never raises the energy, so the result satisfies
    ``energy_discrete(x) <= energy_relaxed(q)``. Ties go to the smallest label.
    """
    q = check_relaxed(inst, q, strict=True)
    N, L = q.shape
    if order is None:
        order = np.arange(N, dtype=np.int64)
    else:
        order = np.asarray(order, dtype=np.int64)
        if order.shape != (N,) or not np.array_equal(np.sort(order), np.arange(N)):
            raise InvalidInputError("rounding order must be a permutation of the pixels")
    H, W = inst.shape
    lat = inst.lattice
    bl = inst.bilateral.taps if inst.bilateral is not None else np.zeros((L, L, 0))
    return kernels.round_sequential(
        inst.unary.values, q, inst.spatial.taps, H, W, lat.indptr, lat.indices, lat.tap, bl, order
    )


def argmax_labels(q) -> np.ndarray:
    return np.argmax(np.asarray(q), axis=1).astype(np.int64)
