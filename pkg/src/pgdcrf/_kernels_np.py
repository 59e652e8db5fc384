"""Pure-numpy reference kernels.

Array conventions shared with ``_kernels_nb``:

* ``q`` fields are ``(H, W, L)`` for spatial kernels and ``(N, L)`` otherwise.
* spatial taps are ``(L, L, 2s+1, 2s+1)`` indexed ``[lam, mu, dy+s, dx+s]``
  where ``(dx, dy)`` is the neighbour offset ``p_j - p_i``. The centre tap
  is never read.
* pair (bilateral) neighbourhoods are CSR arrays ``indptr, indices, tap``:
  row ``i`` lists neighbours ``j != i`` in ascending order and the flat tap
  index of ``cell_j - cell_i``.
"""

import numpy as np


def _shift_slices(n, d):
    # destination / source slices for out[y] += q[y + d]
    if d >= 0:
        return slice(0, n - d), slice(d, n)
    return slice(-d, n), slice(0, n + d)


def spatial_apply(q, taps):
    H, W, L = q.shape
    s = taps.shape[2] // 2
    out = np.zeros((H, W, L))
    for dy in range(-s, s + 1):
        if abs(dy) >= H:
            continue
        ydst, ysrc = _shift_slices(H, dy)
        for dx in range(-s, s + 1):
            if (dy == 0 and dx == 0) or abs(dx) >= W:
                continue
            xdst, xsrc = _shift_slices(W, dx)
            k = taps[:, :, dy + s, dx + s]
            out[ydst, xdst, :] += q[ysrc, xsrc, :] @ k.T
    return out


def spatial_tap_grad(u, q, s):
    H, W, L = q.shape
    S = 2 * s + 1
    grad = np.zeros((L, L, S, S))
    for dy in range(-s, s + 1):
        if abs(dy) >= H:
            continue
        ydst, ysrc = _shift_slices(H, dy)
        for dx in range(-s, s + 1):
            if (dy == 0 and dx == 0) or abs(dx) >= W:
                continue
            xdst, xsrc = _shift_slices(W, dx)
            a = u[ydst, xdst, :].reshape(-1, L)
            b = q[ysrc, xsrc, :].reshape(-1, L)
            grad[:, :, dy + s, dx + s] = a.T @ b
    return grad


def _padded_rows(indptr, indices, tap):
    n = indptr.shape[0] - 1
    deg = np.diff(indptr)
    maxdeg = int(deg.max()) if n else 0
    cols = np.arange(maxdeg)
    mask = cols[None, :] < deg[:, None]
    pos = indptr[:-1, None] + cols[None, :]
    pos = np.where(mask, pos, 0)
    if indices.size == 0:
        return mask, np.zeros_like(pos), np.zeros_like(pos)
    return mask, indices[pos], tap[pos]


def pair_apply(indptr, indices, tap, q, taps):
    # Accumulates neighbour by neighbour, label by label, so that the
    # floating-point summation order matches a plain double loop.
    N, L = q.shape
    out = np.zeros((N, L))
    mask, J, T = _padded_rows(indptr, indices, tap)
    for p in range(mask.shape[1]):
        rows = np.nonzero(mask[:, p])[0]
        if rows.size == 0:
            continue
        jj = J[rows, p]
        tt = T[rows, p]
        for mu in range(L):
            out[rows, :] += taps[:, mu, tt].T * q[jj, mu][:, None]
    return out


def pair_tap_grad(indptr, indices, tap, u, q, ntaps):
    N, L = q.shape
    grad = np.zeros((L, L, ntaps))
    rows = np.repeat(np.arange(N), np.diff(indptr))
    if rows.size == 0:
        return grad
    outer = u[rows, :, None] * q[indices, None, :]
    for lam in range(L):
        for mu in range(L):
            grad[lam, mu] = np.bincount(tap, weights=outer[:, lam, mu], minlength=ntaps)
    return grad


def project_rows(qt, alpha):
    """Row-wise sort-and-threshold simplex projection with a leaky tail.

    Returns ``(out, thresh, k)`` where ``k`` counts the entries left below
    the threshold by the downward search.
    """
    N, L = qt.shape
    s = np.sort(qt, axis=1)
    # suffix[:, k] = sum of s[:, k:], accumulated from the largest entry down
    suffix = np.cumsum(s[:, ::-1], axis=1)[:, ::-1]
    k_idx = np.arange(L)
    t_all = (suffix - 1.0) / (L - k_idx)[None, :]
    cond = np.zeros((N, L), dtype=bool)
    cond[:, 1:] = t_all[:, 1:] >= s[:, :-1]
    # largest k >= 1 satisfying the stopping test, else 0
    rev = cond[:, ::-1]
    has = rev.any(axis=1)
    k = np.where(has, L - 1 - np.argmax(rev, axis=1), 0)
    thresh = t_all[np.arange(N), k]
    f = qt - thresh[:, None]
    if alpha > 0:
        out = np.where(f >= 0, f, alpha * f)
    else:
        out = np.where(f >= 0, f, 0.0)
    return out, thresh, k.astype(np.int64)


def project_rows_vjp(qt, thresh, k, alpha, gout):
    N, L = qt.shape
    f = qt - thresh[:, None]
    c = np.where(f >= 0, 1.0, alpha)
    d = np.where(qt > thresh[:, None], 1.0 / (L - k)[:, None], 0.0)
    return c * gout - d * (c * gout).sum(axis=1, keepdims=True)


def round_sequential(psi, q, sp_taps, H, W, indptr, indices, tap, bl_taps, order):
    N, L = psi.shape
    cur = q.copy()
    s = sp_taps.shape[2] // 2
    nbl = bl_taps.shape[2]
    labels = np.zeros(N, dtype=np.int64)
    # combined forward + transposed taps: coefficient of cur[j, mu] in the
    # linear cost of q_m[lam]
    sp_both = sp_taps + sp_taps.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
    bl_both = bl_taps + bl_taps.transpose(1, 0, 2)[:, :, ::-1]
    for m in order:
        y, x = divmod(int(m), W)
        cost = psi[m].copy()
        y0, y1 = max(0, y - s), min(H, y + s + 1)
        x0, x1 = max(0, x - s), min(W, x + s + 1)
        patch = cur.reshape(H, W, L)[y0:y1, x0:x1, :]
        kk = sp_both[:, :, y0 - y + s:y1 - y + s, x0 - x + s:x1 - x + s].copy()
        kk[:, :, y - y0, x - x0] = 0.0
        cost += np.einsum("lmab,abm->l", kk, patch)
        lo, hi = indptr[m], indptr[m + 1]
        if hi > lo and nbl:
            jj = indices[lo:hi]
            tt = tap[lo:hi]
            cost += np.einsum("lmp,pm->l", bl_both[:, :, tt], cur[jj])
        lab = int(np.argmin(cost))
        labels[m] = lab
        cur[m] = 0.0
        cur[m, lab] = 1.0
    return labels
