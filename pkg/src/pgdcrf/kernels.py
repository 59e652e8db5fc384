"""Dispatch for the inner-loop kernels.

The numba path is used when numba imports and ``PGDCRF_DISABLE_NUMBA`` is
unset; otherwise the numpy path in ``_kernels_np`` runs. Both paths accept
and return plain float64 / int64 arrays.
"""

import numpy as np

from . import _kernels_np
from ._accel import USE_NUMBA

if USE_NUMBA:
    from . import _kernels_nb as _impl

    BACKEND = "numba"
else:
    _impl = _kernels_np
    BACKEND = "numpy"


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def spatial_apply(q_hwl, taps):
    return _impl.spatial_apply(_f64(q_hwl), _f64(taps))


def spatial_tap_grad(u_hwl, q_hwl, s):
    return _impl.spatial_tap_grad(_f64(u_hwl), _f64(q_hwl), int(s))


def pair_apply(indptr, indices, tap, q, taps):
    return _impl.pair_apply(_i64(indptr), _i64(indices), _i64(tap), _f64(q), _f64(taps))


def pair_tap_grad(indptr, indices, tap, u, q, ntaps):
    return _impl.pair_tap_grad(_i64(indptr), _i64(indices), _i64(tap), _f64(u), _f64(q), int(ntaps))


def project_rows(qt, alpha):
    return _impl.project_rows(_f64(qt), float(alpha))


def project_rows_vjp(qt, thresh, k, alpha, gout):
    return _impl.project_rows_vjp(_f64(qt), _f64(thresh), _i64(k), float(alpha), _f64(gout))


def round_sequential(psi, q, sp_taps, H, W, indptr, indices, tap, bl_taps, order):
    return _impl.round_sequential(
        _f64(psi), _f64(q), _f64(sp_taps), int(H), int(W),
        _i64(indptr), _i64(indices), _i64(tap), _f64(bl_taps), _i64(order),
    )
