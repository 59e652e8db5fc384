"""numba-compiled kernels; same signatures and conventions as ``_kernels_np``."""

import numpy as np
from numba import njit


@njit(cache=True)
def spatial_apply(q, taps):
    H, W, L = q.shape
    s = taps.shape[2] // 2
    out = np.zeros((H, W, L))
    # offset-major so the valid pixel range is computed once per tap
    for dy in range(-s, s + 1):
        y0, y1 = max(0, -dy), min(H, H - dy)
        for dx in range(-s, s + 1):
            if dy == 0 and dx == 0:
                continue
            x0, x1 = max(0, -dx), min(W, W - dx)
            k = np.ascontiguousarray(taps[:, :, dy + s, dx + s])
            for y in range(y0, y1):
                for x in range(x0, x1):
                    for lam in range(L):
                        acc = 0.0
                        for mu in range(L):
                            acc += k[lam, mu] * q[y + dy, x + dx, mu]
                        out[y, x, lam] += acc
    return out


@njit(cache=True)
def spatial_tap_grad(u, q, s):
    H, W, L = q.shape
    S = 2 * s + 1
    grad = np.zeros((L, L, S, S))
    g = np.zeros((L, L))
    for dy in range(-s, s + 1):
        y0, y1 = max(0, -dy), min(H, H - dy)
        for dx in range(-s, s + 1):
            if dy == 0 and dx == 0:
                continue
            x0, x1 = max(0, -dx), min(W, W - dx)
            g[:, :] = 0.0
            for y in range(y0, y1):
                for x in range(x0, x1):
                    for lam in range(L):
                        a = u[y, x, lam]
                        for mu in range(L):
                            g[lam, mu] += a * q[y + dy, x + dx, mu]
            grad[:, :, dy + s, dx + s] = g
    return grad


@njit(cache=True)
def pair_apply(indptr, indices, tap, q, taps):
    N, L = q.shape
    out = np.zeros((N, L))
    for i in range(N):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            t = tap[p]
            for mu in range(L):
                qj = q[j, mu]
                for lam in range(L):
                    out[i, lam] += taps[lam, mu, t] * qj
    return out


@njit(cache=True)
def pair_tap_grad(indptr, indices, tap, u, q, ntaps):
    N, L = q.shape
    grad = np.zeros((L, L, ntaps))
    for i in range(N):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            t = tap[p]
            for lam in range(L):
                a = u[i, lam]
                for mu in range(L):
                    grad[lam, mu, t] += a * q[j, mu]
    return grad


@njit(cache=True)
def project_rows(qt, alpha):
    N, L = qt.shape
    out = np.empty((N, L))
    thresh = np.empty(N)
    kk = np.empty(N, dtype=np.int64)
    s = np.empty(L)
    for i in range(N):
        # insertion sort into a reused buffer; rows are short
        for a in range(L):
            v = qt[i, a]
            b = a
            while b > 0 and s[b - 1] > v:
                s[b] = s[b - 1]
                b -= 1
            s[b] = v
        k = L - 1
        tot = s[L - 1]
        t = 0.0
        found = False
        while k >= 1:
            t = (tot - 1.0) / (L - k)
            if t >= s[k - 1]:
                found = True
                break
            tot += s[k - 1]
            k -= 1
        if not found:
            k = 0
            t = (tot - 1.0) / L
        thresh[i] = t
        kk[i] = k
        for lam in range(L):
            f = qt[i, lam] - t
            if f >= 0.0:
                out[i, lam] = f
            elif alpha > 0.0:
                out[i, lam] = alpha * f
            else:
                out[i, lam] = 0.0
    return out, thresh, kk


@njit(cache=True)
def project_rows_vjp(qt, thresh, k, alpha, gout):
    N, L = qt.shape
    gin = np.empty((N, L))
    for i in range(N):
        t = thresh[i]
        inv = 1.0 / (L - k[i])
        tot = 0.0
        for lam in range(L):
            c = 1.0 if qt[i, lam] - t >= 0.0 else alpha
            gin[i, lam] = c * gout[i, lam]
            tot += gin[i, lam]
        for mu in range(L):
            if qt[i, mu] > t:
                gin[i, mu] -= inv * tot
    return gin


@njit(cache=True)
def round_sequential(psi, q, sp_taps, H, W, indptr, indices, tap, bl_taps, order):
    N, L = psi.shape
    cur = q.copy()
    s = sp_taps.shape[2] // 2
    S = 2 * s + 1
    nbl = bl_taps.shape[2]
    labels = np.zeros(N, dtype=np.int64)
    cost = np.empty(L)
    for idx in range(order.shape[0]):
        m = order[idx]
        y = m // W
        x = m - y * W
        for lam in range(L):
            cost[lam] = psi[m, lam]
        for dy in range(-s, s + 1):
            yy = y + dy
            if yy < 0 or yy >= H:
                continue
            for dx in range(-s, s + 1):
                xx = x + dx
                if xx < 0 or xx >= W or (dy == 0 and dx == 0):
                    continue
                j = yy * W + xx
                a = dy + s
                b = dx + s
                for lam in range(L):
                    acc = 0.0
                    for mu in range(L):
                        acc += (sp_taps[lam, mu, a, b] + sp_taps[mu, lam, S - 1 - a, S - 1 - b]) * cur[j, mu]
                    cost[lam] += acc
        if nbl > 0:
            for p in range(indptr[m], indptr[m + 1]):
                j = indices[p]
                t = tap[p]
                for lam in range(L):
                    acc = 0.0
                    for mu in range(L):
                        acc += (bl_taps[lam, mu, t] + bl_taps[mu, lam, nbl - 1 - t]) * cur[j, mu]
                    cost[lam] += acc
        best = 0
        for lam in range(1, L):
            if cost[lam] < cost[best]:
                best = lam
        labels[m] = best
        for lam in range(L):
            cur[m, lam] = 0.0
        cur[m, best] = 1.0
    return labels
