import numpy as np
import pytest

from pgdcrf.model import CrfInstance, GridGeometry, SpatialKernelBank, UnaryField


def potts_pair(tap=0.5):
    """1x2 grid, psi_1 = (0, 1), psi_2 = (1, 0), Potts tap on the horizontal neighbour."""
    psi = np.array([[0.0, 1.0], [1.0, 0.0]])
    z = np.exp(-psi)
    taps = np.zeros((2, 2, 3, 3))
    for dx in (0, 2):
        taps[0, 1, 1, dx] = taps[1, 0, 1, dx] = tap
    return CrfInstance(GridGeometry(1, 2), UnaryField(z, 1.0, 0.0, psi), SpatialKernelBank(taps))


def unary_only(psi, height, width, radius=1):
    psi = np.asarray(psi, dtype=np.float64)
    L = psi.shape[1]
    z = np.exp(-psi)
    return CrfInstance(GridGeometry(height, width), UnaryField(z, 1.0, 0.0, psi), SpatialKernelBank.zeros(L, radius))


@pytest.fixture
def pair():
    return potts_pair()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
