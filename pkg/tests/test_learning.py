from dataclasses import replace

import numpy as np
import pytest

from pgdcrf.errors import InvalidInputError
from pgdcrf.learning import (
    GradientSet,
    TrainConfig,
    apply_params,
    backward_step,
    backward_unroll,
    evaluate,
    forward_unrolled,
    grad_check,
    init_params,
    instance_loss_and_grad,
    loss_nll,
    pin_structure,
    sgd_update,
    train,
)
from pgdcrf.lattice import all_offsets
from pgdcrf.model import SpatialKernelBank, make_unary
from pgdcrf.simplex import project_field_full, projection_jacobian
from pgdcrf.synth import TaskSpec, gen_stripes, random_instance


class TestBackwardStep:
    def test_zero_step(self, rng):
        inst = random_instance(rng, 3, 3, 3, bilateral_radius=1)
        q = rng.dirichlet(np.ones(3), size=9)
        proj = project_field_full(q, 0.01)
        g = rng.normal(size=q.shape)
        out = backward_step(g, q, proj, inst, 0.0)
        for i in range(9):
            assert np.allclose(out.q[i], projection_jacobian(q[i], 0.01).T @ g[i], atol=1e-15)
        assert np.all(out.psi == 0) and np.all(out.spatial == 0) and np.all(out.bilateral == 0)

    def test_centering_with_zero_kernels(self, rng):
        z = rng.dirichlet(np.ones(4) * 20, size=6)
        inst = random_instance(rng, 2, 3, 4, scale=0.0).with_unary(make_unary(z, 0.01))
        q = z
        proj = project_field_full(q - 0.5 * inst.unary.values, 1.0)
        assert np.all(proj.k == 0) and np.all(proj.branch_signature())  # interior point
        g = rng.normal(size=q.shape)
        out = backward_step(g, q, proj, inst, 0.5)
        assert np.allclose(out.q, g - g.mean(axis=1, keepdims=True), atol=1e-15)

    @pytest.mark.parametrize("seed", range(4))
    def test_one_step_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        inst = random_instance(rng, 3, 3, 3, bilateral_radius=1, theta_p=2.0, theta_c=60.0)
        q = rng.dirichlet(np.ones(3), size=9)
        g = rng.normal(size=q.shape)
        step, alpha, h = 0.5, 0.01, 1e-6

        def loss(qq, psi=None, sp=None):
            local = inst
            if psi is not None:
                local = local.with_unary(replace(inst.unary, values=psi))
            if sp is not None:
                local = local.with_banks(SpatialKernelBank(sp))
            trace = forward_unrolled(local, qq, 1, step, alpha)
            return float(np.sum(g * trace.final))

        proj = forward_unrolled(inst, q, 1, step, alpha).projections[0]
        assert proj.margin() > 1e-4
        out = backward_step(g, q, proj, inst, step)
        for idx in [(0, 0), (4, 1), (8, 2)]:
            e = np.zeros_like(q)
            e[idx] = h
            num = (loss(q + e) - loss(q - e)) / (2 * h)
            assert out.q[idx] == pytest.approx(num, rel=1e-5, abs=1e-8)
            num = (loss(q, psi=inst.unary.values + e) - loss(q, psi=inst.unary.values - e)) / (2 * h)
            assert out.psi[idx] == pytest.approx(num, rel=1e-5, abs=1e-8)
        for c in [(0, 1, 0, 1), (2, 2, 2, 2)]:
            t = inst.spatial.taps.copy()
            t[c] += h
            up = loss(q, sp=t)
            t[c] -= 2 * h
            num = (up - loss(q, sp=t)) / (2 * h)
            assert out.spatial[c] == pytest.approx(num, rel=1e-5, abs=1e-8)


class TestBackwardUnroll:
    def test_single_step_is_step_plus_z_paths(self, rng):
        inst = random_instance(rng, 3, 3, 3)
        trace = forward_unrolled(inst, inst.unary.scores, 1, 0.5, 0.01)
        g = rng.normal(size=(9, 3))
        full = backward_unroll(trace, g, inst)
        one = backward_step(g, trace.states[0], trace.projections[0], inst, 0.5)
        assert np.allclose(full.spatial, one.spatial, atol=0)
        arg = inst.unary.scores + inst.unary.eps
        assert np.allclose(full.z, one.q + one.psi * (-inst.unary.weight / arg), rtol=1e-14)
        assert full.w_u == pytest.approx(float(np.sum(one.psi * -np.log(arg))), rel=1e-14)

    def test_w_u_path(self, rng):
        inst = random_instance(rng, 3, 3, 3, scale=0.0)
        rep = grad_check(inst, iterations=1, seed=3)
        assert rep.checked["w_u"] == 1 and rep.errors["w_u"] < 1e-6

    def test_spatial_only(self, rng):
        inst = random_instance(rng, 4, 4, 3, radius=2)
        rep = grad_check(inst, seed=1)
        assert rep.passed and rep.errors["spatial"] < 1e-4
        assert "bilateral" not in rep.errors

    def test_full_instance(self, rng):
        inst = random_instance(rng, 4, 4, 3, bilateral_radius=1, theta_p=2.0, theta_c=60.0)
        rep = grad_check(inst, seed=2)
        assert rep.passed
        assert set(rep.errors) == {"w_u", "spatial", "bilateral", "z"}
        assert len(list(rep.lines())) == 4


class TestLoss:
    def test_correct_integral(self):
        q = np.eye(3)[[0, 2, 1]]
        loss, _ = loss_nll(q, np.array([0, 2, 1]))
        assert loss == 0.0

    def test_uniform(self):
        loss, _ = loss_nll(np.full((5, 4), 0.25), np.zeros(5, dtype=int))
        assert loss == pytest.approx(np.log(4), rel=1e-15)

    def test_gradient(self, rng):
        q = rng.dirichlet(np.ones(3), size=6)
        truth = rng.integers(0, 3, size=6)
        _, g = loss_nll(q, truth)
        h = 1e-7
        for idx in np.ndindex(q.shape):
            e = np.zeros_like(q)
            e[idx] = h
            num = (loss_nll(q + e, truth)[0] - loss_nll(q - e, truth)[0]) / (2 * h)
            assert g[idx] == pytest.approx(num, rel=1e-6, abs=1e-9)

    def test_floor(self):
        loss, g = loss_nll(np.array([[1.0, 0.0]]), np.array([1]))
        assert loss == pytest.approx(-np.log(1e-12)) and np.all(g == 0)


class TestSgd:
    def make(self, rng, bilateral=True):
        p = init_params(3, 1, 1 if bilateral else None)
        p = replace(p, spatial=SpatialKernelBank(rng.normal(size=p.spatial.shape)).symmetrized().taps)
        return pin_structure(p)

    def grads_like(self, p, rng, scale=1.0):
        b = None if p.bilateral is None else scale * rng.normal(size=p.bilateral.shape)
        return GradientSet(scale * rng.normal(), scale * rng.normal(size=p.spatial.shape), b, None)

    def test_zero_gradient_no_decay(self, rng):
        p = self.make(rng)
        new, _ = sgd_update(p, self.grads_like(p, rng, 0.0), p.zeros_like(), TrainConfig(weight_decay=0.0))
        assert np.array_equal(new.flat(), p.flat())

    def test_first_step(self, rng):
        p = self.make(rng, bilateral=False)
        g = GradientSet(0.3, SpatialKernelBank(rng.normal(size=p.spatial.shape)).symmetrized().taps, None, None)
        cfg = TrainConfig(learning_rate=0.1, weight_decay=0.01)
        new, vel = sgd_update(p, g, p.zeros_like(), cfg)
        assert new.w_u == pytest.approx(p.w_u - 0.1 * (0.3 + 0.01 * p.w_u), rel=1e-15)
        assert np.allclose(new.spatial, p.spatial - 0.1 * (g.spatial + 0.01 * p.spatial), atol=1e-15)

    def test_two_step_momentum(self, rng):
        p0 = self.make(rng, bilateral=False)
        cfg = TrainConfig(learning_rate=0.05, momentum=0.9, weight_decay=0.0)
        g1 = GradientSet(0.2, np.zeros_like(p0.spatial), None, None)
        g2 = GradientSet(-0.1, np.zeros_like(p0.spatial), None, None)
        p1, v1 = sgd_update(p0, g1, p0.zeros_like(), cfg)
        p2, _ = sgd_update(p1, g2, v1, cfg)
        v1_ = -0.05 * 0.2
        v2_ = 0.9 * v1_ - 0.05 * -0.1
        assert p2.w_u == pytest.approx(p0.w_u + v1_ + v2_, rel=1e-15)

    def test_pins_survive(self, rng):
        p = self.make(rng)
        v = p.zeros_like()
        for _ in range(10):
            p, v = sgd_update(p, self.grads_like(p, rng), v, TrainConfig(learning_rate=0.1))
        assert np.all(p.spatial[:, :, 1, 1] == 0)
        assert p.spatial_bank().asymmetry() <= 1e-12 and p.bilateral_bank().asymmetry() <= 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_descent_direction(self, seed):
        rng = np.random.default_rng(seed)
        inst = gen_stripes(TaskSpec("stripes", 6, 6, 2, 0.3, seed, radius=1))
        p = init_params(2, 1)
        cfg = TrainConfig(momentum=0.0, weight_decay=0.0)
        _, g = instance_loss_and_grad(inst, p, cfg)
        new, _ = sgd_update(p, g, p.zeros_like(), cfg)
        step = new.flat() - p.flat()
        grad = np.concatenate([[g.w_u], g.spatial.ravel()])
        assert float(grad @ step) < 0


class TestInit:
    def test_defaults(self):
        p = init_params(3, 4, 1)
        assert p.w_u == 0.5
        assert p.spatial.shape == (3, 3, 9, 9) and np.all(p.spatial == 0)

    def test_bilateral_potts_gaussian(self):
        p = init_params(3, 1, 1, bilateral_weight=2.0)
        for lam in range(3):
            assert np.all(p.bilateral[lam, lam] == 0)
        gauss = 2.0 * np.exp(-0.5 * np.sum(all_offsets(1) ** 2, axis=1))
        assert np.array_equal(p.bilateral[0, 1], gauss) and np.array_equal(p.bilateral[2, 1], gauss)
        assert p.bilateral_bank().asymmetry() == 0.0


class TestTraining:
    def test_config_validation(self):
        with pytest.raises(InvalidInputError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(InvalidInputError):
            TrainConfig(momentum=1.0)

    def test_needs_truth(self, rng):
        inst = random_instance(rng, 3, 3, 2)
        with pytest.raises(InvalidInputError):
            instance_loss_and_grad(inst, init_params(2, 1), TrainConfig())

    def test_bilateral_params_need_features(self, rng):
        with pytest.raises(InvalidInputError):
            apply_params(random_instance(rng, 3, 3, 2), init_params(2, 1, 1))

    def test_short_run_reduces_loss(self):
        inst = gen_stripes(TaskSpec("stripes", 8, 8, 2, 0.3, 0))
        res = train([inst], init_params(2, 2), TrainConfig(batch_size=1, epochs=40))
        assert len(res.losses) == 40
        assert res.losses[-1] < res.losses[0]
        q, x = evaluate(inst, res.params)
        assert q.shape == (64, 2) and x.shape == (64,)
