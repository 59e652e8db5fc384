import numpy as np
import pytest

from pgdcrf.errors import InvalidInputError
from pgdcrf.model import is_symmetric
from pgdcrf.oracle import OracleBudget
from pgdcrf.synth import GENERATORS, TaskSpec, flip_count, gen_potts_random, gen_stripes, generate


@pytest.mark.parametrize("gen", GENERATORS)
def test_seed_determinism(gen):
    spec = TaskSpec(gen, 6, 5, 3, 0.4, seed=9)
    a, b = generate(spec), generate(spec)
    assert np.array_equal(a.unary.scores, b.unary.scores)
    assert np.array_equal(a.spatial.taps, b.spatial.taps)
    assert np.array_equal(a.truth, b.truth)


@pytest.mark.parametrize("gen", GENERATORS)
def test_valid_at_default_sizes(gen):
    inst = generate(TaskSpec(gen, 16, 16, 4, 0.3, seed=1))
    assert inst.truth.shape == (256,) and inst.truth.min() >= 0 and inst.truth.max() < 4
    assert np.all(inst.unary.scores >= 0) and np.allclose(inst.unary.scores.sum(axis=1), 1)
    # small grids stay inside the exhaustive oracle budget
    small = generate(TaskSpec(gen, 2, 5, 4, 0.3, seed=1))
    assert small.n_labels**small.n_pixels <= OracleBudget().max_configurations


def test_potts_noise_free_argmin_is_truth():
    inst = gen_potts_random(TaskSpec(height=5, width=4, n_labels=3, noise=0.0, seed=2))
    assert np.array_equal(inst.unary.values.argmin(axis=1), inst.truth)


def test_potts_symmetric_and_in_range():
    inst = gen_potts_random(TaskSpec(height=4, width=4, n_labels=3, seed=5))
    assert is_symmetric(inst)
    off = inst.spatial.taps[0, 1]
    w = off[off != 0][0]
    assert 0.05 <= w <= 0.3
    assert np.all(inst.spatial.taps[1, 1] == 0)


def test_stripes_noise_free():
    inst = gen_stripes(TaskSpec("stripes", 4, 8, 2, 0.0, seed=0))
    assert np.array_equal(inst.unary.scores.argmax(axis=1), inst.truth)
    assert inst.truth.reshape(4, 8)[0].tolist() == [0, 0, 1, 1, 0, 0, 1, 1]


def test_stripes_flip_count_frozen():
    spec = TaskSpec("stripes", 16, 16, 2, 0.3, seed=0)
    inst = gen_stripes(spec)
    flips = flip_count(spec)
    # the first 256 uniforms of default_rng(0) below 0.3
    assert flips == 67
    assert int(np.sum(inst.unary.scores.argmax(axis=1) != inst.truth)) == flips


def test_thin_vertical_lines():
    inst = generate(TaskSpec("thin-vertical", 3, 8, 2, 0.0))
    assert inst.truth.reshape(3, 8)[:, 2].tolist() == [1, 1, 1]
    assert inst.truth.sum() == 3 * 2


@pytest.mark.parametrize("kw", [dict(generator="nope"), dict(n_labels=1), dict(noise=1.5), dict(height=0)])
def test_spec_validation(kw):
    with pytest.raises(InvalidInputError):
        TaskSpec(**kw)
