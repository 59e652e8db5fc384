"""Pairwise filter responses and their adjoints.

``spatial_response`` is a zero-padded cross-correlation of the label field
with the ``L x L`` spatial bank; ``bilateral_response`` sums over lattice
neighbours in ascending pixel order.
"""

import numpy as np

from . import kernels


def spatial_response(q, bank, height, width):
    """``v[i, lam] = sum_{d != 0, mu} k[lam, mu, d] * q[i + d, mu]`` on an ``(N, L)`` field."""
    q = np.asarray(q, dtype=np.float64)
    L = q.shape[1]
    out = kernels.spatial_apply(q.reshape(height, width, L), bank.taps)
    return out.reshape(-1, L)


def bilateral_response(q, lattice, bank):
    q = np.asarray(q, dtype=np.float64)
    if lattice.n_pairs == 0:
        return np.zeros_like(q)
    return kernels.pair_apply(lattice.indptr, lattice.indices, lattice.tap, q, bank.taps)


def pairwise_response(inst, q):
    """Sum of spatial and bilateral responses, i.e. ``K q`` for the instance."""
    H, W = inst.shape
    v = spatial_response(q, inst.spatial, H, W)
    if inst.bilateral is not None:
        v = v + bilateral_response(q, inst.lattice, inst.bilateral)
    return v


def pairwise_response_adjoint(inst, u):
    """``K^T u``: the same filters with labels swapped and offsets negated."""
    H, W = inst.shape
    v = spatial_response(u, inst.spatial.transposed(), H, W)
    if inst.bilateral is not None:
        v = v + bilateral_response(u, inst.lattice, inst.bilateral.transposed())
    return v


def spatial_tap_gradient(u, q, radius, height, width):
    """Gradient of ``<u, spatial_response(q, k)>`` with respect to every tap ``k``."""
    L = q.shape[1]
    return kernels.spatial_tap_grad(
        np.asarray(u, dtype=np.float64).reshape(height, width, L),
        np.asarray(q, dtype=np.float64).reshape(height, width, L),
        radius,
    )


def bilateral_tap_gradient(u, q, lattice):
    return kernels.pair_tap_grad(lattice.indptr, lattice.indices, lattice.tap, u, q, lattice.n_taps)
