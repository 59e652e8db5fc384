"""Seeded synthetic CRF instances."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .lattice import window_size
from .model import (
    DEFAULT_EPS,
    BilateralKernelBank,
    CrfInstance,
    FeatureField,
    GridGeometry,
    SpatialKernelBank,
    make_unary,
    symmetrize_kernels,
)

GENERATORS = ("potts-random", "stripes", "thin-vertical")


@dataclass(frozen=True)
class TaskSpec:
    generator: str = "potts-random"
    height: int = 3
    width: int = 3
    n_labels: int = 3
    noise: float = 0.8
    seed: int = 0
    radius: int = 1
    strength: tuple = (0.05, 0.3)  # Potts weight range for potts-random
    unary_weight: float = 1.0
    confidence: float = 0.6  # score of the observed label (stripes / thin-vertical)
    stripe_width: int = 2

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise InvalidInputError(f"unknown generator {self.generator!r}; choose from {GENERATORS}")
        if self.n_labels < 2 or self.height < 1 or self.width < 1:
            raise InvalidInputError("need at least 2 labels and a non-empty grid")
        if not 0.0 <= self.noise <= 1.0:
            raise InvalidInputError("noise must lie in [0, 1]")


def generate(spec: TaskSpec) -> CrfInstance:
    if spec.generator == "potts-random":
        return gen_potts_random(spec)
    if spec.generator == "stripes":
        return gen_stripes(spec)
    return gen_thin_vertical(spec)


def gen_potts_random(spec: TaskSpec) -> CrfInstance:
    """Blocky random truth, Dirichlet-mixed scores and a Potts spatial bank.

    Scores are ``(1 - noise) * onehot(truth) + noise * Dirichlet(1, ..., 1)``,
    so ``noise = 0`` makes the unary argmin equal to the truth.
    """
    rng = np.random.default_rng(spec.seed)
    H, W, L = spec.height, spec.width, spec.n_labels
    coarse = rng.integers(0, L, size=((H + 1) // 2, (W + 1) // 2))
    truth = np.kron(coarse, np.ones((2, 2), dtype=np.int64))[:H, :W].ravel()
    onehot = np.eye(L)[truth]
    z = (1.0 - spec.noise) * onehot + spec.noise * rng.dirichlet(np.ones(L), size=H * W)
    lo, hi = spec.strength
    weight = rng.uniform(lo, hi)
    return CrfInstance(
        GridGeometry(H, W),
        make_unary(z, spec.unary_weight, DEFAULT_EPS),
        SpatialKernelBank.potts(L, spec.radius, weight),
        truth=truth,
    )


def _flip(truth, noise, L, rng):
    flips = rng.random(truth.shape[0]) < noise
    shift = rng.integers(1, L, size=truth.shape[0])
    return np.where(flips, (truth + shift) % L, truth), flips


def _scores_from_labels(observed, L, confidence):
    other = (1.0 - confidence) / (L - 1)
    z = np.full((observed.shape[0], L), other)
    z[np.arange(observed.shape[0]), observed] = confidence
    return z


def gen_stripes(spec: TaskSpec) -> CrfInstance:
    """Vertical label stripes with label-flip noise on the unary scores."""
    rng = np.random.default_rng(spec.seed)
    H, W, L = spec.height, spec.width, spec.n_labels
    cols = (np.arange(W) // spec.stripe_width) % L
    truth = np.tile(cols, H)
    observed, _ = _flip(truth, spec.noise, L, rng)
    z = _scores_from_labels(observed, L, spec.confidence)
    return CrfInstance(
        GridGeometry(H, W),
        make_unary(z, spec.unary_weight, DEFAULT_EPS),
        SpatialKernelBank.zeros(L, spec.radius),
        truth=truth,
    )


def gen_thin_vertical(spec: TaskSpec) -> CrfInstance:
    """One-pixel-wide vertical lines of label 1 on a label-0 background."""
    rng = np.random.default_rng(spec.seed)
    H, W, L = spec.height, spec.width, spec.n_labels
    gap = max(2, spec.stripe_width * 2)
    cols = np.where(np.arange(W) % gap == gap // 2, 1, 0)
    truth = np.tile(cols, H)
    observed, _ = _flip(truth, spec.noise, L, rng)
    z = _scores_from_labels(observed, L, spec.confidence)
    return CrfInstance(
        GridGeometry(H, W),
        make_unary(z, spec.unary_weight, DEFAULT_EPS),
        SpatialKernelBank.zeros(L, spec.radius),
        truth=truth,
    )


def flip_count(spec: TaskSpec) -> int:
    """Number of pixels whose observed label differs from the stripes truth."""
    rng = np.random.default_rng(spec.seed)
    H, W, L = spec.height, spec.width, spec.n_labels
    truth = np.tile((np.arange(W) // spec.stripe_width) % L, H)
    _, flips = _flip(truth, spec.noise, L, rng)
    return int(flips.sum())


def random_image(rng, height, width, levels=4, spread=255.0):
    """Piecewise-constant RGB image with a few intensity levels plus jitter."""
    base = rng.integers(0, levels, size=(height, width, 3)) * (spread / max(levels - 1, 1))
    return np.clip(base + rng.normal(0, 3.0, size=base.shape), 0, 255)


def random_instance(rng, height, width, n_labels, radius=1, bilateral_radius=None,
                    scale=0.3, theta_p=3.0, theta_c=80.0, symmetric=True, w_u=1.0, floor=0.02):
    """Instance with Dirichlet scores and dense random banks, for property checks.

    Scores are kept at least ``floor`` away from zero so that finite
    differences on ``z`` are not dominated by the curvature of the log.
    """
    z = (1.0 - floor * n_labels) * rng.dirichlet(np.ones(n_labels), size=height * width) + floor
    side = 2 * radius + 1
    sp = SpatialKernelBank(rng.normal(0, scale, size=(n_labels, n_labels, side, side)))
    bil, feats = None, None
    if bilateral_radius is not None:
        bil = BilateralKernelBank(
            rng.normal(0, scale, size=(n_labels, n_labels, window_size(bilateral_radius))), bilateral_radius
        )
        feats = FeatureField.from_image(random_image(rng, height, width), theta_p, theta_c)
    inst = CrfInstance(GridGeometry(height, width), make_unary(z, w_u, DEFAULT_EPS), sp, bil, feats)
    if symmetric:
        inst = symmetrize_kernels(inst)
    return inst
