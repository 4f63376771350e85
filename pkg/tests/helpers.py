"""Reference oracles shared by the tests."""

import itertools

import numpy as np
from scipy.optimize import linprog




def lp_oracle(C, a, b, balanced=False):
    """Reference optimum from HiGHS with tight tolerances."""
    C = np.asarray(C, dtype=float)
    n, m = C.shape
    A_rows = np.kron(np.eye(n), np.ones(m))
    A_cols = np.kron(np.ones(n), np.eye(m))
    opts = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}
    if balanced:
        res = linprog(C.ravel(), A_eq=np.vstack([A_rows, A_cols]), b_eq=np.concatenate([a, b]),
                      method="highs", options=opts)
    else:
        res = linprog(C.ravel(), A_ub=A_cols, b_ub=b, A_eq=A_rows, b_eq=a,
                      method="highs", options=opts)
    assert res.status == 0, res.message
    return res.fun


def vertex_oracle(C, a, b):
    """Minimum over every basic feasible solution of the dummy-augmented
    balanced problem, found by enumerating all candidate bases."""
    C = np.asarray(C, dtype=float)
    n, m = C.shape
    Cb = np.vstack([C, np.zeros(m)])
    supply = np.concatenate([a, [b.sum() - 1.0]])
    A = np.vstack([np.kron(np.eye(n + 1), np.ones(m)), np.kron(np.ones(n + 1), np.eye(m))])
    rhs = np.concatenate([supply, b])
    A, rhs = A[:-1], rhs[:-1]                     # one equation is redundant
    r = n + m
    best = np.inf
    for cols in itertools.combinations(range((n + 1) * m), r):
        B = A[:, cols]
        if abs(np.linalg.det(B)) < 1e-9:
            continue
        x = np.linalg.solve(B, rhs)
        if x.min() < -1e-12:
            continue
        best = min(best, float(Cb.ravel()[list(cols)] @ x))
    return best


def random_cost(rng, n, m, d=2):
    X = rng.normal(size=(n, d))
    Y = rng.normal(size=(m, d))
    return ((X[:, None] - Y[None]) ** 2).sum(-1)


def random_capacity(rng, m, slack=True):
    """Capacities with total >= 1, some columns tiny."""
    b = rng.uniform(0.05, 1.0, size=m)
    b = b / b.sum() * (rng.uniform(1.0, 2.0) if slack else 1.0)
    return b


def check_lp_certificate(st, C, a, b, tol_gap=1e-8, tol_mass=1e-9):
    P = st.plan
    assert abs(st.objective - st.dual_objective()) <= tol_gap
    assert np.abs(P.sum(axis=1) - a).max() <= tol_mass
    assert np.all(P.sum(axis=0) <= b + tol_mass)
    assert np.all(P >= -tol_mass)
    assert np.all(st.g <= 1e-9)
    assert np.all(st.f[:, None] + st.g[None, :] <= C + 1e-9)
