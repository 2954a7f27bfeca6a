"""Independent reference solutions used across the test suite.

Everything here is deliberately brute force (enumeration, grids, dense
linear algebra) and shares no code with the solver paths under test.
"""

from itertools import combinations

import numpy as np


def clamp_qp_solution(q, a, lower, upper):
    """Closed form for min sum q_i (w_i - a_i)^2 over a box."""
    return np.clip(a, lower, upper)


def soft_threshold_clip(v, weight, lower, upper):
    """Closed form for min (w - v)^2 + weight*|w| over [lower, upper] (1-D)."""
    s = np.sign(v) * np.maximum(np.abs(v) - weight / 2.0, 0.0)
    return float(np.clip(s, lower, upper))


def kkt_qp(H, c, A=None, b=None, G=None, h=None, tol=1e-9):
    """Global minimum of a convex QP by active-set enumeration on the KKT
    system.  min 1/2 z'Hz + c'z  s.t.  Az = b, Gz <= h."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    m_eq = 0 if A is None else np.atleast_2d(A).shape[0]
    m_in = 0 if G is None else np.atleast_2d(G).shape[0]
    if A is not None:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
    if G is not None:
        G = np.atleast_2d(np.asarray(G, dtype=float))
        h = np.atleast_1d(np.asarray(h, dtype=float))

    best = None
    for size in range(0, m_in + 1):
        for S in combinations(range(m_in), size):
            S = list(S)
            rows = []
            if A is not None:
                rows.append(A)
            if S:
                rows.append(G[S])
            if rows:
                E = np.vstack(rows)
                rhs_e = np.concatenate(
                    [b if A is not None else np.zeros(0),
                     h[S] if S else np.zeros(0)])
                K = np.block([[H, E.T], [E, np.zeros((E.shape[0], E.shape[0]))]])
                rhs = np.concatenate([-c, rhs_e])
            else:
                K, rhs = H, -c
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            z = sol[:n]
            mult = sol[n + m_eq:] if rows else np.zeros(0)
            if S and np.any(mult < -tol):
                continue
            if A is not None and np.max(np.abs(A @ z - b)) > 1e-7:
                continue
            if G is not None and np.max(G @ z - h) > 1e-7:
                continue
            val = 0.5 * z @ H @ z + c @ z
            if best is None or val < best[0] - 1e-12:
                best = (val, z)
        if best is not None:
            return best[1]
    if best is None:
        raise RuntimeError("active-set enumeration found no KKT point")
    return best[1]


def grid_minimize_1d(fun, lower, upper, points=20001):
    """Dense grid minimizer for one-dimensional slices."""
    xs = np.linspace(lower, upper, points)
    vals = np.array([fun(x) for x in xs])
    return xs[int(np.argmin(vals))]


def fd_gradient(fun, x, eps=1e-6):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        g[i] = (fun(x + e) - fun(x - e)) / (2 * eps)
    return g
