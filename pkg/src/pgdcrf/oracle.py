"""Brute-force references used to check the fast paths.

Nothing here calls the filter kernels: pair sets are rebuilt from pixel
coordinates and raw features by explicit double loops.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import BudgetExceededError, InvalidInputError


@dataclass(frozen=True)
class OracleBudget:
    max_configurations: int = 2**20
    max_dense_pixels: int = 256

    def __post_init__(self):
        if self.max_configurations < 1 or self.max_dense_pixels < 1:
            raise InvalidInputError("oracle budgets must be positive")


def _cell_tap(ci, cj, radius):
    delta = cj - ci
    if np.any(np.abs(delta) > radius):
        return -1
    side = 2 * radius + 1
    idx = 0
    for v in delta:
        idx = idx * side + int(v) + radius
    return idx


def _pair_tables(inst):
    """Every ordered pair with a non-trivial potential, as (i, j, L x L table)."""
    H, W = inst.shape
    N, L = inst.n_pixels, inst.n_labels
    r = inst.spatial.radius
    cells = None
    if inst.bilateral is not None:
        cells = np.floor(inst.features.values).astype(np.int64)
    I, J, tables = [], [], []
    for i in range(N):
        yi, xi = divmod(i, W)
        for j in range(N):
            if i == j:
                continue
            yj, xj = divmod(j, W)
            table = np.zeros((L, L))
            used = False
            dy, dx = yj - yi, xj - xi
            if abs(dy) <= r and abs(dx) <= r:
                table += inst.spatial.taps[:, :, dy + r, dx + r]
                used = True
            if cells is not None:
                t = _cell_tap(cells[i], cells[j], inst.bilateral.radius)
                if t >= 0:
                    table += inst.bilateral.taps[:, :, t]
                    used = True
            if used:
                I.append(i)
                J.append(j)
                tables.append(table)
    if not tables:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros((0, L, L))
    return np.array(I), np.array(J), np.array(tables)


def exhaustive_min(inst, budget=OracleBudget(), chunk=1 << 15):
    """Global minimiser of the discrete energy by full enumeration.

    Labelings are visited in lexicographic order (pixel 0 most significant);
    among labelings whose energy equals the minimum up to 1e-12 relative,
    the first one is returned.
    """
    N, L = inst.n_pixels, inst.n_labels
    total = L**N
    if total > budget.max_configurations:
        raise BudgetExceededError(total, budget.max_configurations)
    I, J, tables = _pair_tables(inst)
    psi = inst.unary.values
    pidx = np.arange(len(I))
    energies = np.empty(total)
    powers = L ** np.arange(N - 1, -1, -1)
    for start in range(0, total, chunk):
        codes = np.arange(start, min(total, start + chunk))
        X = (codes[:, None] // powers[None, :]) % L
        e = psi[np.arange(N)[None, :], X].sum(axis=1)
        if len(I):
            e = e + tables[pidx[None, :], X[:, I], X[:, J]].sum(axis=1)
        energies[start:start + len(codes)] = e
    best = energies.min()
    tol = 1e-12 * max(1.0, abs(best))
    code = int(np.argmax(energies <= best + tol))
    x = (code // powers) % L
    return x.astype(np.int64), float(energies[code])


def brute_energy(inst, x):
    """Discrete energy by explicit iteration over ordered pairs."""
    x = np.asarray(x, dtype=np.int64)
    I, J, tables = _pair_tables(inst)
    e = float(inst.unary.values[np.arange(inst.n_pixels), x].sum())
    for p in range(len(I)):
        e += tables[p, x[I[p]], x[J[p]]]
    return e


def project_oracle(x):
    """Simplex projection by enumerating every support set.

    On a support ``S`` the equality-constrained least-squares solution is
    ``x_S - (sum(x_S) - 1)/|S|``; the feasible candidate nearest to ``x``
    wins.
    """
    x = np.asarray(x, dtype=np.float64)
    L = x.shape[0]
    best, best_d = None, np.inf
    for size in range(1, L + 1):
        for S in combinations(range(L), size):
            S = list(S)
            cand = np.zeros(L)
            cand[S] = x[S] - (x[S].sum() - 1.0) / size
            if np.any(cand[S] < 0):
                continue
            d = float(np.sum((cand - x) ** 2))
            if d < best_d:
                best, best_d = cand, d
    return best


def dense_bilateral(q, features, bank, budget=OracleBudget()):
    """Bilateral response by a double loop over all ordered pixel pairs.

    Per output pixel the terms are added neighbour by neighbour (ascending
    ``j``), then label by label, the same order as the lattice path.
    """
    q = np.asarray(q, dtype=np.float64)
    values = features.values if hasattr(features, "values") else np.asarray(features)
    N, L = q.shape
    if N > budget.max_dense_pixels:
        raise BudgetExceededError(N, budget.max_dense_pixels, "pixels")
    cells = np.floor(values).astype(np.int64)
    out = np.zeros((N, L))
    for i in range(N):
        near = np.all(np.abs(cells - cells[i]) <= bank.radius, axis=1)
        acc = np.zeros(L)
        for j in np.nonzero(near)[0]:
            if j == i:
                continue
            t = _cell_tap(cells[i], cells[j], bank.radius)
            for mu in range(L):
                acc += bank.taps[:, mu, t] * q[j, mu]
        out[i] = acc
    return out
