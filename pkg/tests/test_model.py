import itertools

import numpy as np
import pytest
from conftest import potts_pair

from pgdcrf.errors import InvalidInputError
from pgdcrf.model import (
    BilateralKernelBank,
    CrfInstance,
    FeatureField,
    GridGeometry,
    SpatialKernelBank,
    energy_discrete,
    energy_relaxed,
    is_symmetric,
    make_unary,
    one_hot,
    step_size_bound,
    symmetrize_kernels,
)
from pgdcrf.synth import random_instance


class TestMakeUnary:
    def test_log_one_is_zero(self):
        u = make_unary(np.array([[1.0, 0.5]]), 1.0, 0.0)
        assert u.values[0, 0] == 0.0 and not np.signbit(u.values[0, 0])

    def test_exact_examples(self):
        u = make_unary(np.array([[1.0, np.exp(-2.0)]]), 0.5, 0.0)
        assert u.values[0, 0] == 0.0
        assert u.values[0, 1] == pytest.approx(1.0, abs=1e-15)

    def test_zero_score_with_floor(self):
        u = make_unary(np.array([[0.0, 1.0]]), 1.0, 1e-8)
        # -ln(1e-8) to 20 digits
        assert u.values[0, 0] == pytest.approx(18.420680743952367, rel=1e-15)

    def test_stores_sources(self):
        z = np.array([[0.3, 0.7]])
        u = make_unary(z, 0.5, 1e-8)
        assert np.array_equal(u.scores, z) and u.weight == 0.5 and u.eps == 1e-8
        assert np.array_equal(u.values, -0.5 * np.log(z + 1e-8))

    @pytest.mark.parametrize("z", [[[0.0, 1.0]], [[1.5, 0.0]], [[-0.1, 1.0]], [[np.nan, 1.0]]])
    def test_rejects_bad_scores(self, z):
        with pytest.raises(InvalidInputError):
            make_unary(np.array(z), 1.0, 0.0)


class TestDiscreteEnergy:
    def test_pair_table(self):
        inst = potts_pair()
        table = {x: energy_discrete(inst, np.array(x)) for x in itertools.product((0, 1), repeat=2)}
        assert table == {(0, 0): 1.0, (0, 1): 1.0, (1, 0): 3.0, (1, 1): 1.0}

    def test_zero_taps_is_unary_sum(self):
        inst = potts_pair(0.0)
        for x in itertools.product((0, 1), repeat=2):
            assert energy_discrete(inst, np.array(x)) == inst.unary.values[0, x[0]] + inst.unary.values[1, x[1]]

    def test_all_zero_potentials(self):
        inst = potts_pair(0.0).with_unary(make_unary(np.ones((2, 2)), 0.0, 1e-8))
        for x in itertools.product((0, 1), repeat=2):
            assert energy_discrete(inst, np.array(x)) == 0.0

    @pytest.mark.parametrize("x", [[0], [0, 2], [0.5, 1], [-1, 0]])
    def test_rejects_bad_labelings(self, x):
        with pytest.raises(InvalidInputError):
            energy_discrete(potts_pair(), np.array(x))


class TestRelaxedEnergy:
    def test_uniform_pair(self):
        assert energy_relaxed(potts_pair(), np.full((2, 2), 0.5)) == 1.5

    @pytest.mark.parametrize("seed", range(6))
    @pytest.mark.parametrize("bilateral", [None, 1])
    def test_integral_states_match_discrete(self, seed, bilateral):
        rng = np.random.default_rng(seed)
        inst = random_instance(rng, 2, 2, 3, bilateral_radius=bilateral, theta_p=1.0, theta_c=60.0,
                               symmetric=False)
        for x in itertools.product(range(3), repeat=4):
            x = np.array(x)
            assert energy_relaxed(inst, one_hot(x, 3)) == pytest.approx(energy_discrete(inst, x), rel=1e-12, abs=1e-12)

    def test_affine_along_single_pixel_segment(self, rng):
        inst = random_instance(rng, 3, 3, 3, bilateral_radius=1, symmetric=False)
        x = rng.integers(0, 3, size=9)
        y = x.copy()
        y[4] = (x[4] + 1) % 3
        e0, e1 = energy_discrete(inst, x), energy_discrete(inst, y)
        for s in (0.25, 0.5, 0.75):
            q = (1 - s) * one_hot(x, 3) + s * one_hot(y, 3)
            assert energy_relaxed(inst, q) == pytest.approx((1 - s) * e0 + s * e1, rel=1e-12)


class TestSymmetrize:
    def test_fixed_point(self):
        inst = potts_pair()
        assert is_symmetric(inst)
        assert np.array_equal(symmetrize_kernels(inst).spatial.taps, inst.spatial.taps)

    def test_mean_of_mirrored_taps(self):
        taps = np.zeros((2, 2, 3, 3))
        taps[0, 1, 1, 2] = 1.0  # k_01 at offset (+1, 0); its mirror k_10(-1, 0) is zero
        sym = SpatialKernelBank(taps).symmetrized().taps
        assert sym[0, 1, 1, 2] == 0.5 and sym[1, 0, 1, 0] == 0.5

    @pytest.mark.parametrize("seed", range(3))
    def test_preserves_relaxed_energy(self, seed):
        rng = np.random.default_rng(seed)
        inst = random_instance(rng, 4, 3, 3, radius=2, bilateral_radius=1, symmetric=False)
        assert not is_symmetric(inst)
        sym = symmetrize_kernels(inst)
        assert is_symmetric(sym)
        for _ in range(100):
            q = rng.dirichlet(np.ones(3), size=12)
            assert energy_relaxed(sym, q) == pytest.approx(energy_relaxed(inst, q), rel=1e-12)


class TestStepBound:
    def test_zero_pairwise_gives_cap(self):
        assert step_size_bound(potts_pair(0.0)) == 1e6
        assert step_size_bound(potts_pair(0.0), cap=7.0) == 7.0

    def test_pair_value(self):
        assert step_size_bound(potts_pair()) == 0.5

    def test_homogeneity(self, rng):
        inst = random_instance(rng, 4, 4, 3, bilateral_radius=1)
        doubled = inst.with_banks(SpatialKernelBank(2 * inst.spatial.taps),
                                  BilateralKernelBank(2 * inst.bilateral.taps, 1))
        assert step_size_bound(doubled) == pytest.approx(step_size_bound(inst) / 2, rel=1e-14)


class TestTypes:
    def test_spatial_centre_tap_pinned(self):
        bank = SpatialKernelBank(np.ones((2, 2, 3, 3)))
        assert np.all(bank.taps[:, :, 1, 1] == 0)

    def test_bilateral_needs_features(self):
        with pytest.raises(InvalidInputError):
            CrfInstance(GridGeometry(1, 2), potts_pair().unary, SpatialKernelBank.zeros(2, 1),
                        BilateralKernelBank.zeros(2, 1))

    def test_feature_scales_positive(self):
        with pytest.raises(InvalidInputError):
            FeatureField.from_image(np.zeros((2, 2, 3)), 0.0, 1.0)

    def test_single_label_rejected(self):
        with pytest.raises(InvalidInputError):
            CrfInstance(GridGeometry(1, 1), make_unary(np.ones((1, 1))), SpatialKernelBank.zeros(1, 1))

    def test_white_pixel_features(self):
        f = FeatureField.from_image(np.full((1, 1), 255.0), 3.0, 80.0)
        assert np.array_equal(f.values, [[0.0, 0.0, 255 / 80, 255 / 80, 255 / 80]])
