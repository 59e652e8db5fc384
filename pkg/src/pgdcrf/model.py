"""CRF instances over pixel grids and exact evaluation of their energies.

The pairwise edge set is the set of *ordered* pixel pairs ``(i, j)``,
``i != j``; every unordered pair therefore contributes twice. Kernel taps
are indexed by the neighbour offset ``p_j - p_i`` (spatial) or
``cell_j - cell_i`` (bilateral).
"""

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional

import numpy as np

from . import filters
from .errors import InvalidInputError
from .lattice import FEATURE_DIM, FeatureLattice, build_feature_lattice, empty_lattice, window_size

DEFAULT_EPS = 1e-8
DEFAULT_UNARY_WEIGHT = 0.5
DEFAULT_STEP_CAP = 1e6


@dataclass(frozen=True)
class GridGeometry:
    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise InvalidInputError(f"grid must be at least 1x1, got {self.height}x{self.width}")

    @property
    def n_pixels(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class UnaryField:
    """Unary costs ``-w_u * log(z + eps)`` together with their source scores."""

    scores: np.ndarray
    weight: float
    eps: float
    values: np.ndarray

    @property
    def n_labels(self) -> int:
        return self.values.shape[1]


def make_unary(z, w_u=DEFAULT_UNARY_WEIGHT, eps=DEFAULT_EPS) -> UnaryField:
    z = np.array(z, dtype=np.float64)
    if z.ndim != 2:
        raise InvalidInputError(f"scores must be (N, L), got shape {z.shape}")
    if not np.all(np.isfinite(z)) or np.any(z < 0) or np.any(z > 1):
        raise InvalidInputError("scores must lie in [0, 1]")
    if eps < 0:
        raise InvalidInputError("eps must be non-negative")
    arg = z + eps
    if np.any(arg <= 0):
        bad = np.argwhere(arg <= 0)[0]
        raise InvalidInputError(f"log of non-positive score at pixel {bad[0]}, label {bad[1]}; use eps > 0")
    with np.errstate(divide="ignore"):
        values = -float(w_u) * np.log(arg) + 0.0  # + 0.0 normalises -0.0
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("unary potentials are not finite")
    return UnaryField(z, float(w_u), float(eps), values)


@dataclass(frozen=True)
class SpatialKernelBank:
    """``L x L`` filters over a ``(2r+1) x (2r+1)`` window, indexed ``[lam, mu, dy+r, dx+r]``."""

    taps: np.ndarray

    def __post_init__(self):
        t = self.taps
        if t.ndim != 4 or t.shape[0] != t.shape[1] or t.shape[2] != t.shape[3] or t.shape[2] % 2 != 1:
            raise InvalidInputError(f"spatial taps must be (L, L, 2r+1, 2r+1), got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise InvalidInputError("spatial taps must be finite")
        r = t.shape[2] // 2
        if t[:, :, r, r].any():
            t = t.copy()
            t[:, :, r, r] = 0.0
            object.__setattr__(self, "taps", t)

    @classmethod
    def zeros(cls, n_labels, radius):
        side = 2 * radius + 1
        return cls(np.zeros((n_labels, n_labels, side, side)))

    @classmethod
    def potts(cls, n_labels, radius, weight):
        taps = np.zeros((n_labels, n_labels, 2 * radius + 1, 2 * radius + 1))
        off = ~np.eye(n_labels, dtype=bool)
        taps[off] = weight
        return cls(taps)

    @property
    def n_labels(self) -> int:
        return self.taps.shape[0]

    @property
    def radius(self) -> int:
        return self.taps.shape[2] // 2

    def transposed(self) -> "SpatialKernelBank":
        """Bank of the adjoint operator: labels swapped, offsets negated."""
        return SpatialKernelBank(self.taps.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1].copy())

    def symmetrized(self) -> "SpatialKernelBank":
        return SpatialKernelBank(0.5 * (self.taps + self.transposed().taps))

    def asymmetry(self) -> float:
        return float(np.max(np.abs(self.taps - self.transposed().taps), initial=0.0))


@dataclass(frozen=True)
class BilateralKernelBank:
    """``L x L`` filters over the feature-lattice offset cube, indexed ``[lam, mu, flat offset]``."""

    taps: np.ndarray
    radius: int

    def __post_init__(self):
        t = self.taps
        if t.ndim != 3 or t.shape[0] != t.shape[1] or t.shape[2] != window_size(self.radius):
            raise InvalidInputError(
                f"bilateral taps must be (L, L, {window_size(self.radius)}) for radius {self.radius}, got {t.shape}"
            )
        if not np.all(np.isfinite(t)):
            raise InvalidInputError("bilateral taps must be finite")

    @classmethod
    def zeros(cls, n_labels, radius):
        return cls(np.zeros((n_labels, n_labels, window_size(radius))), radius)

    @property
    def n_labels(self) -> int:
        return self.taps.shape[0]

    def transposed(self) -> "BilateralKernelBank":
        return BilateralKernelBank(self.taps.transpose(1, 0, 2)[:, :, ::-1].copy(), self.radius)

    def symmetrized(self) -> "BilateralKernelBank":
        return BilateralKernelBank(0.5 * (self.taps + self.transposed().taps), self.radius)

    def asymmetry(self) -> float:
        return float(np.max(np.abs(self.taps - self.transposed().taps), initial=0.0))


@dataclass(frozen=True)
class FeatureField:
    """Per-pixel ``(x/theta_p, y/theta_p, r/theta_c, g/theta_c, b/theta_c)``."""

    values: np.ndarray
    theta_p: float
    theta_c: float

    def __post_init__(self):
        if self.theta_p <= 0 or self.theta_c <= 0:
            raise InvalidInputError("feature scales must be strictly positive")
        if self.values.ndim != 2 or self.values.shape[1] != FEATURE_DIM:
            raise InvalidInputError(f"features must be (N, {FEATURE_DIM}), got {self.values.shape}")

    @classmethod
    def from_image(cls, image, theta_p, theta_c):
        """Build features from an ``(H, W)`` gray or ``(H, W, 3)`` RGB image."""
        img = np.asarray(image, dtype=np.float64)
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        if img.ndim != 3 or img.shape[2] != 3:
            raise InvalidInputError(f"image must be (H, W) or (H, W, 3), got {img.shape}")
        if theta_p <= 0 or theta_c <= 0:
            raise InvalidInputError("feature scales must be strictly positive")
        H, W, _ = img.shape
        ys, xs = np.mgrid[0:H, 0:W]
        values = np.column_stack([
            xs.ravel() / theta_p,
            ys.ravel() / theta_p,
            img[:, :, 0].ravel() / theta_c,
            img[:, :, 1].ravel() / theta_c,
            img[:, :, 2].ravel() / theta_c,
        ])
        return cls(values, float(theta_p), float(theta_c))


@dataclass(frozen=True)
class CrfInstance:
    geometry: GridGeometry
    unary: UnaryField
    spatial: SpatialKernelBank
    bilateral: Optional[BilateralKernelBank] = None
    features: Optional[FeatureField] = None
    truth: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        N, L = self.unary.values.shape
        if N != self.geometry.n_pixels:
            raise InvalidInputError(f"unary has {N} rows, grid has {self.geometry.n_pixels} pixels")
        if L < 2:
            raise InvalidInputError("need at least two labels")
        if self.spatial.n_labels != L:
            raise InvalidInputError("spatial bank label count does not match unary")
        if (self.bilateral is None) != (self.features is None):
            raise InvalidInputError("bilateral bank and features must be given together")
        if self.bilateral is not None:
            if self.bilateral.n_labels != L:
                raise InvalidInputError("bilateral bank label count does not match unary")
            if self.features.values.shape[0] != N:
                raise InvalidInputError("feature rows do not match pixel count")
        if self.truth is not None:
            t = np.asarray(self.truth)
            if t.shape != (N,) or np.any(t < 0) or np.any(t >= L):
                raise InvalidInputError("truth labels must be N entries in [0, L)")

    @property
    def n_pixels(self) -> int:
        return self.geometry.n_pixels

    @property
    def n_labels(self) -> int:
        return self.unary.values.shape[1]

    @property
    def shape(self):
        return self.geometry.height, self.geometry.width

    @cached_property
    def lattice(self) -> FeatureLattice:
        if self.bilateral is None:
            return empty_lattice(self.n_pixels)
        return build_feature_lattice(self.features.values, self.bilateral.radius)

    def with_banks(self, spatial=None, bilateral=None) -> "CrfInstance":
        new = replace(
            self,
            spatial=spatial if spatial is not None else self.spatial,
            bilateral=bilateral if bilateral is not None else self.bilateral,
        )
        if new.bilateral is not None and self.bilateral is not None and new.bilateral.radius == self.bilateral.radius:
            # lattice depends only on features and radius
            new.__dict__["lattice"] = self.lattice
        return new

    def with_unary(self, unary: UnaryField) -> "CrfInstance":
        new = replace(self, unary=unary)
        if "lattice" in self.__dict__:
            new.__dict__["lattice"] = self.lattice
        return new


def check_labeling(inst: CrfInstance, x) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != (inst.n_pixels,):
        raise InvalidInputError(f"labeling must have {inst.n_pixels} entries, got shape {x.shape}")
    if not np.issubdtype(x.dtype, np.integer):
        if not np.all(x == np.round(x)):
            raise InvalidInputError("labels must be integers")
    x = x.astype(np.int64)
    if np.any(x < 0) or np.any(x >= inst.n_labels):
        raise InvalidInputError(f"labels must lie in [0, {inst.n_labels})")
    return x


def check_relaxed(inst: CrfInstance, q, strict=True, tol=1e-9) -> np.ndarray:
    """Validate an ``(N, L)`` relaxed state; ``strict`` demands simplex rows."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (inst.n_pixels, inst.n_labels):
        raise InvalidInputError(f"relaxed state must be {(inst.n_pixels, inst.n_labels)}, got {q.shape}")
    if not np.all(np.isfinite(q)):
        raise InvalidInputError("relaxed state has non-finite entries")
    if strict:
        if np.any(q < -tol) or np.any(q > 1 + tol):
            raise InvalidInputError("relaxed state entries must lie in [0, 1]")
        dev = np.abs(q.sum(axis=1) - 1.0)
        if np.any(dev > tol):
            raise InvalidInputError(f"row {int(np.argmax(dev))} does not sum to one")
    return q


def one_hot(x, n_labels) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    q = np.zeros((x.shape[0], n_labels))
    q[np.arange(x.shape[0]), x] = 1.0
    return q


def energy_discrete(inst: CrfInstance, x) -> float:
    """Gibbs energy of a labeling, summed edge by edge over ordered pairs."""
    x = check_labeling(inst, x)
    H, W = inst.shape
    N = inst.n_pixels
    total = float(inst.unary.values[np.arange(N), x].sum())

    taps = inst.spatial.taps
    r = inst.spatial.radius
    grid = x.reshape(H, W)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if (dx == 0 and dy == 0) or abs(dy) >= H or abs(dx) >= W:
                continue
            yi = slice(max(0, -dy), H - max(0, dy))
            xi = slice(max(0, -dx), W - max(0, dx))
            yj = slice(max(0, dy), H - max(0, -dy))
            xj = slice(max(0, dx), W - max(0, -dx))
            total += float(taps[grid[yi, xi], grid[yj, xj], dy + r, dx + r].sum())

    if inst.bilateral is not None:
        lat = inst.lattice
        rows = np.repeat(np.arange(N), np.diff(lat.indptr))
        total += float(inst.bilateral.taps[x[rows], x[lat.indices], lat.tap].sum())
    return total


def energy_relaxed(inst: CrfInstance, q) -> float:
    """Relaxed quadratic energy ``<psi, q> + <q, K q>`` over ordered pairs."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (inst.n_pixels, inst.n_labels):
        raise InvalidInputError(f"relaxed state must be {(inst.n_pixels, inst.n_labels)}, got {q.shape}")
    pair = filters.pairwise_response(inst, q)
    return float(np.sum(inst.unary.values * q) + np.sum(q * pair))


def symmetrize_kernels(inst: CrfInstance) -> CrfInstance:
    """Replace each bank by its energy-equivalent symmetric counterpart."""
    bil = inst.bilateral.symmetrized() if inst.bilateral is not None else None
    return inst.with_banks(inst.spatial.symmetrized(), bil)


def is_symmetric(inst: CrfInstance, tol=1e-12) -> bool:
    if inst.spatial.asymmetry() > tol:
        return False
    return inst.bilateral is None or inst.bilateral.asymmetry() <= tol


def step_size_bound(inst: CrfInstance, cap=DEFAULT_STEP_CAP) -> float:
    """Largest step that guarantees monotone projected-gradient descent.

    Uses a Gershgorin bound: the Hessian of the relaxed energy has row sums
    at most ``2 * max_i sum_{j, lam, mu} |k_lam,mu(i -> j)|``.
    """
    N, L = inst.n_pixels, inst.n_labels
    ones = np.ones((N, L))
    H, W = inst.shape
    row = filters.spatial_response(ones, SpatialKernelBank(np.abs(inst.spatial.taps)), H, W)
    if inst.bilateral is not None:
        absb = BilateralKernelBank(np.abs(inst.bilateral.taps), inst.bilateral.radius)
        row = row + filters.bilateral_response(ones, inst.lattice, absb)
    bound = float(row.sum(axis=1).max())
    if bound <= 0:
        return float(cap)
    return min(float(cap), 1.0 / (2.0 * bound))
