"""Backpropagation through unrolled projected-gradient inference.

One unrolled step is

    q_pre = q - step * (psi + 2 K_w q)
    q_next = P_alpha(q_pre)

with ``psi = -w_u log(z + eps)`` and ``K_w`` the spatial plus bilateral
filter operator. The backward pass walks the stored trace from the last
step to the first, accumulating tap gradients, and finally routes the
unary cotangent back to ``w_u`` and to the scores ``z`` (which also
initialise ``q``).
"""

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .errors import InvalidInputError
from .filters import bilateral_tap_gradient, pairwise_response_adjoint, spatial_tap_gradient
from .inference import energy_gradient, round_sequential
from .lattice import all_offsets
from .model import (
    DEFAULT_EPS,
    DEFAULT_UNARY_WEIGHT,
    BilateralKernelBank,
    CrfInstance,
    SpatialKernelBank,
    UnaryField,
)
from .simplex import TRAIN_ALPHA, FieldProjection, project_field, project_field_full

LOSS_FLOOR = 1e-12


@dataclass(frozen=True)
class ParameterSet:
    w_u: float
    spatial: np.ndarray  # (L, L, 2r+1, 2r+1)
    bilateral: Optional[np.ndarray] = None  # (L, L, K)
    bilateral_radius: Optional[int] = None

    @property
    def n_labels(self) -> int:
        return self.spatial.shape[0]

    @property
    def spatial_radius(self) -> int:
        return self.spatial.shape[2] // 2

    def spatial_bank(self) -> SpatialKernelBank:
        return SpatialKernelBank(self.spatial)

    def bilateral_bank(self) -> Optional[BilateralKernelBank]:
        if self.bilateral is None:
            return None
        return BilateralKernelBank(self.bilateral, self.bilateral_radius)

    def flat(self) -> np.ndarray:
        parts = [np.array([self.w_u]), self.spatial.ravel()]
        if self.bilateral is not None:
            parts.append(self.bilateral.ravel())
        return np.concatenate(parts)

    def zeros_like(self) -> "ParameterSet":
        b = None if self.bilateral is None else np.zeros_like(self.bilateral)
        return ParameterSet(0.0, np.zeros_like(self.spatial), b, self.bilateral_radius)


@dataclass(frozen=True)
class GradientSet:
    w_u: float
    spatial: np.ndarray
    bilateral: Optional[np.ndarray]
    z: np.ndarray

    def as_parameters(self, radius=None) -> ParameterSet:
        return ParameterSet(self.w_u, self.spatial, self.bilateral, radius)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-3
    batch_size: int = 20
    epochs: int = 1
    alpha: float = TRAIN_ALPHA
    iterations: int = 5
    step: float = 0.5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidInputError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidInputError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.iterations < 1:
            raise InvalidInputError("batch size and iterations must be positive")


@dataclass(frozen=True)
class StepGradients:
    q: np.ndarray
    psi: np.ndarray
    spatial: np.ndarray
    bilateral: Optional[np.ndarray]


@dataclass
class UnrolledTrace:
    """Forward states ``q^0 .. q^T`` and the projection record of each step."""

    states: List[np.ndarray]
    projections: List[FieldProjection]
    step: float
    alpha: float

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def kink_margin(self) -> float:
        return min((p.margin() for p in self.projections), default=np.inf)

    def branch_signature(self) -> np.ndarray:
        return np.concatenate([p.branch_signature().ravel() for p in self.projections])


def init_params(n_labels, spatial_radius=4, bilateral_radius=None, bilateral_weight=1.0,
                w_u=DEFAULT_UNARY_WEIGHT) -> ParameterSet:
    """Zero spatial filters and Gaussian bilateral filters with Potts label interaction."""
    side = 2 * spatial_radius + 1
    spatial = np.zeros((n_labels, n_labels, side, side))
    bil = None
    if bilateral_radius is not None:
        offs = all_offsets(bilateral_radius)
        gauss = bilateral_weight * np.exp(-0.5 * np.sum(offs**2, axis=1))
        bil = np.zeros((n_labels, n_labels, offs.shape[0]))
        off = ~np.eye(n_labels, dtype=bool)
        bil[off] = gauss
    return ParameterSet(float(w_u), spatial, bil, bilateral_radius)


def apply_params(inst: CrfInstance, params: ParameterSet, z=None) -> CrfInstance:
    """Instance with the learnable parts replaced; ``z`` overrides the scores."""
    z = inst.unary.scores if z is None else np.asarray(z, dtype=np.float64)
    eps = inst.unary.eps
    unary = UnaryField(z, float(params.w_u), eps, -float(params.w_u) * np.log(z + eps))
    new = inst.with_unary(unary).with_banks(params.spatial_bank(), params.bilateral_bank())
    if params.bilateral is not None and inst.features is None:
        raise InvalidInputError("bilateral parameters need an instance with features")
    return new


def forward_unrolled(inst: CrfInstance, q0, iterations, step, alpha) -> UnrolledTrace:
    q = np.asarray(q0, dtype=np.float64)
    states, projs = [q], []
    for _ in range(iterations):
        proj = project_field_full(q - step * energy_gradient(inst, q), alpha)
        projs.append(proj)
        q = proj.q
        states.append(q)
    return UnrolledTrace(states, projs, float(step), float(alpha))


def backward_step(grad_out, q_t, proj: FieldProjection, inst: CrfInstance, step) -> StepGradients:
    """Cotangents of one unrolled step given ``dLoss/dq^{t+1}``."""
    if proj is None or q_t is None:
        raise InvalidInputError("backward_step needs the stored forward state and projection")
    H, W = inst.shape
    u = proj.vjp(np.asarray(grad_out, dtype=np.float64))
    grad_q = u - 2.0 * step * pairwise_response_adjoint(inst, u)
    d_spatial = -2.0 * step * spatial_tap_gradient(u, q_t, inst.spatial.radius, H, W)
    d_bil = None
    if inst.bilateral is not None:
        d_bil = -2.0 * step * bilateral_tap_gradient(u, q_t, inst.lattice)
    return StepGradients(grad_q, -step * u, d_spatial, d_bil)


def backward_unroll(trace: UnrolledTrace, grad_final, inst: CrfInstance) -> GradientSet:
    g = np.asarray(grad_final, dtype=np.float64)
    d_psi = np.zeros_like(g)
    d_sp = np.zeros_like(inst.spatial.taps)
    d_bl = None if inst.bilateral is None else np.zeros_like(inst.bilateral.taps)
    for t in range(len(trace.projections) - 1, -1, -1):
        sg = backward_step(g, trace.states[t], trace.projections[t], inst, trace.step)
        g = sg.q
        d_psi += sg.psi
        d_sp += sg.spatial
        if d_bl is not None:
            d_bl += sg.bilateral
    z = inst.unary.scores
    arg = z + inst.unary.eps
    d_wu = float(np.sum(d_psi * -np.log(arg)))
    d_z = g + d_psi * (-inst.unary.weight / arg)
    return GradientSet(d_wu, d_sp, d_bl, d_z)


def loss_nll(q_final, truth):
    """Mean per-pixel negative log-likelihood of the true labels, and its gradient."""
    q = np.asarray(q_final, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    N = q.shape[0]
    rows = np.arange(N)
    p = q[rows, truth]
    loss = float(-np.mean(np.log(np.maximum(p, LOSS_FLOOR))))
    grad = np.zeros_like(q)
    grad[rows, truth] = np.where(p > LOSS_FLOOR, -1.0 / (N * np.maximum(p, LOSS_FLOOR)), 0.0)
    return loss, grad


def pin_structure(params: ParameterSet) -> ParameterSet:
    """Zero the spatial self-tap and symmetrise both banks."""
    sp = params.spatial_bank().symmetrized().taps
    bil = params.bilateral
    if bil is not None:
        bil = params.bilateral_bank().symmetrized().taps
    return replace(params, spatial=sp, bilateral=bil)


def sgd_update(params: ParameterSet, grads: GradientSet, velocity: ParameterSet, config: TrainConfig):
    """Classical momentum with weight decay; returns ``(params, velocity)``."""
    lr, m, wd = config.learning_rate, config.momentum, config.weight_decay
    v_wu = m * velocity.w_u - lr * (grads.w_u + wd * params.w_u)
    v_sp = m * velocity.spatial - lr * (grads.spatial + wd * params.spatial)
    v_bl = None
    if params.bilateral is not None:
        v_bl = m * velocity.bilateral - lr * (grads.bilateral + wd * params.bilateral)
    new_vel = ParameterSet(v_wu, v_sp, v_bl, params.bilateral_radius)
    new = ParameterSet(
        params.w_u + v_wu,
        params.spatial + v_sp,
        None if v_bl is None else params.bilateral + v_bl,
        params.bilateral_radius,
    )
    return pin_structure(new), new_vel


def _add(a: GradientSet, b: GradientSet, scale=1.0) -> GradientSet:
    bl = None if a.bilateral is None else a.bilateral + scale * b.bilateral
    return GradientSet(a.w_u + scale * b.w_u, a.spatial + scale * b.spatial, bl, a.z)


def instance_loss_and_grad(inst: CrfInstance, params: ParameterSet, config: TrainConfig):
    if inst.truth is None:
        raise InvalidInputError("training instances need ground-truth labels")
    local = apply_params(inst, params)
    trace = forward_unrolled(local, local.unary.scores, config.iterations, config.step, config.alpha)
    loss, g = loss_nll(trace.final, inst.truth)
    return loss, backward_unroll(trace, g, local)


def evaluate(inst: CrfInstance, params: ParameterSet, iterations=5, step=0.5):
    """Strict (alpha = 0) inference with rounding; returns ``(q_T, labels)``."""
    local = apply_params(inst, params)
    q0 = project_field(local.unary.scores, 0.0)
    trace = forward_unrolled(local, q0, iterations, step, 0.0)
    return trace.final, round_sequential(local, trace.final)


@dataclass
class TrainResult:
    params: ParameterSet
    losses: List[float] = field(default_factory=list)


def train(instances: Sequence[CrfInstance], params: ParameterSet, config: TrainConfig, rng=None) -> TrainResult:
    """Mini-batch SGD over the instances for ``config.epochs`` passes.

    One entry of ``losses`` is recorded per update (mean batch loss before
    the update).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    velocity = params.zeros_like()
    params = pin_structure(params)
    result = TrainResult(params)
    n = len(instances)
    for _ in range(config.epochs):
        order = rng.permutation(n) if n > 1 else np.zeros(1, dtype=np.int64)
        for start in range(0, n, config.batch_size):
            batch = [instances[i] for i in order[start:start + config.batch_size]]
            total, acc = 0.0, None
            for inst in batch:
                loss, g = instance_loss_and_grad(inst, params, config)
                total += loss
                acc = g if acc is None else _add(acc, g)
            scale = 1.0 / len(batch)
            acc = GradientSet(acc.w_u * scale, acc.spatial * scale,
                              None if acc.bilateral is None else acc.bilateral * scale, acc.z)
            result.losses.append(total * scale)
            params, velocity = sgd_update(params, acc, velocity, config)
    result.params = params
    return result


# -- gradient check ----------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict
    checked: dict
    excluded: dict
    base_margin: float
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return bool(self.checked) and all(
            self.checked[k] > 0 and self.errors[k] < self.tolerance for k in self.errors
        )

    def lines(self):
        for k in self.errors:
            yield (f"{k:10s} max_rel_err={self.errors[k]:.3e} checked={self.checked[k]} "
                   f"excluded={self.excluded[k]}")


def grad_check(inst: CrfInstance, params: Optional[ParameterSet] = None, iterations=5, alpha=TRAIN_ALPHA,
               seed=0, step=0.5, h=1e-5, kink_tol=1e-7, tolerance=1e-4, max_per_group=None) -> GradCheckReport:
    """Compare analytic unrolled gradients with central finite differences.

    The scalar checked is a seeded random linear read-out of ``q^T``. A
    coordinate is skipped when either perturbed forward pass changes any
    projection branch or passes within ``kink_tol`` of a threshold. The
    error per group is ``max|analytic - numeric| / max|numeric|``.
    """
    rng = np.random.default_rng(seed)
    if params is None:
        br = inst.bilateral.radius if inst.bilateral is not None else None
        params = ParameterSet(
            inst.unary.weight, inst.spatial.taps.copy(),
            None if br is None else inst.bilateral.taps.copy(), br,
        )
    z0 = inst.unary.scores
    N, L = z0.shape
    readout = rng.normal(size=(N, L))

    def run(p, z):
        local = apply_params(inst, p, z)
        return forward_unrolled(local, z, iterations, step, alpha)

    base_local = apply_params(inst, params)
    base = run(params, z0)
    grads = backward_unroll(base, readout, base_local)
    base_sig = base.branch_signature()

    def fd(make):
        vals = []
        for sgn in (1.0, -1.0):
            p, z = make(sgn * h)
            tr = run(p, z)
            if tr.kink_margin() < kink_tol or not np.array_equal(tr.branch_signature(), base_sig):
                return None
            vals.append(float(np.sum(readout * tr.final)))
        return (vals[0] - vals[1]) / (2 * h)

    def choose(coords):
        if max_per_group is not None and len(coords) > max_per_group:
            idx = rng.choice(len(coords), size=max_per_group, replace=False)
            coords = [coords[i] for i in sorted(idx)]
        return coords

    groups = {}

    def w_u_case(d):
        return replace(params, w_u=params.w_u + d), z0

    groups["w_u"] = ([None], lambda c: w_u_case, lambda c: grads.w_u)

    r = params.spatial_radius
    sp_coords = [c for c in np.ndindex(params.spatial.shape) if not (c[2] == r and c[3] == r)]

    def sp_case(c):
        def make(d):
            t = params.spatial.copy()
            t[c] += d
            return replace(params, spatial=t), z0
        return make

    groups["spatial"] = (choose(sp_coords), sp_case, lambda c: grads.spatial[c])

    if params.bilateral is not None:
        used = np.unique(base_local.lattice.tap)
        unused_grad = np.delete(grads.bilateral, used, axis=2)
        if np.any(unused_grad != 0):
            raise AssertionError("non-zero gradient on a bilateral tap that no pixel pair uses")
        bl_coords = [(a, b, t) for a in range(L) for b in range(L) for t in used]

        def bl_case(c):
            def make(d):
                t = params.bilateral.copy()
                t[c] += d
                return replace(params, bilateral=t), z0
            return make

        groups["bilateral"] = (choose(bl_coords), bl_case, lambda c: grads.bilateral[c])

    z_coords = list(np.ndindex(z0.shape))

    def z_case(c):
        def make(d):
            z = z0.copy()
            z[c] += d
            return params, z
        return make

    groups["z"] = (choose(z_coords), z_case, lambda c: grads.z[c])

    errors, checked, excluded = {}, {}, {}
    for name, (coords, make_case, analytic) in groups.items():
        num, ana = [], []
        skipped = 0
        for c in coords:
            v = fd(make_case(c))
            if v is None:
                skipped += 1
                continue
            num.append(v)
            ana.append(analytic(c))
        num, ana = np.array(num), np.array(ana)
        scale = max(np.max(np.abs(num), initial=0.0), 1e-8)
        errors[name] = float(np.max(np.abs(num - ana), initial=0.0) / scale)
        checked[name] = len(num)
        excluded[name] = skipped
    return GradCheckReport(errors, checked, excluded, base.kink_margin(), tolerance)
