import itertools

import numpy as np
import pytest
from conftest import potts_pair, unary_only

from pgdcrf.errors import BudgetExceededError, InvalidInputError
from pgdcrf.model import energy_discrete
from pgdcrf.oracle import OracleBudget, brute_energy, dense_bilateral, exhaustive_min, project_oracle
from pgdcrf.synth import random_instance


class TestExhaustive:
    def test_pair(self):
        x, e = exhaustive_min(potts_pair())
        assert e == 1.0 and x.tolist() == [0, 0]

    def test_unary_only_is_separable(self, rng):
        psi = rng.random((6, 3))
        x, e = exhaustive_min(unary_only(psi, 2, 3))
        assert np.array_equal(x, psi.argmin(axis=1))
        assert e == pytest.approx(psi.min(axis=1).sum(), rel=1e-14)

    def test_single_pixel(self):
        x, e = exhaustive_min(unary_only(np.array([[0.4, 0.1, 0.3]]), 1, 1))
        assert x.tolist() == [1] and e == 0.1

    def test_ties_lexicographic(self):
        x, _ = exhaustive_min(unary_only(np.zeros((3, 2)), 1, 3))
        assert x.tolist() == [0, 0, 0]

    def test_budget(self):
        inst = unary_only(np.zeros((12, 3)), 3, 4)
        with pytest.raises(BudgetExceededError) as err:
            exhaustive_min(inst, OracleBudget(max_configurations=1000))
        assert err.value.required == 3**12

    def test_budget_validation(self):
        with pytest.raises(InvalidInputError):
            OracleBudget(max_configurations=0)

    @pytest.mark.parametrize("seed", range(4))
    def test_dominates_every_labeling(self, seed):
        inst = random_instance(np.random.default_rng(seed), 2, 3, 2, bilateral_radius=1, symmetric=False)
        _, best = exhaustive_min(inst)
        for x in itertools.product((0, 1), repeat=6):
            e = energy_discrete(inst, np.array(x))
            assert best <= e + 1e-12
            assert brute_energy(inst, np.array(x)) == pytest.approx(e, rel=1e-12, abs=1e-12)


class TestProjectOracle:
    def test_examples(self):
        assert np.array_equal(project_oracle([0.5, 0.5]), [0.5, 0.5])
        assert project_oracle([1.2, -0.1, 0.3]) == pytest.approx([0.95, 0.0, 0.05], abs=1e-15)

    def test_on_simplex(self, rng):
        for _ in range(50):
            q = project_oracle(rng.normal(size=rng.integers(1, 7)) * 3)
            assert np.all(q >= 0) and q.sum() == pytest.approx(1.0, abs=1e-12)


class TestDenseBilateral:
    def test_budget(self, rng):
        inst = random_instance(rng, 4, 4, 2, bilateral_radius=1)
        with pytest.raises(BudgetExceededError):
            dense_bilateral(np.full((16, 2), 0.5), inst.features, inst.bilateral, OracleBudget(max_dense_pixels=10))
