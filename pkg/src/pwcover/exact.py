"""Exact partial optimal transport by a transportation network simplex.

The one-sided problem ``min <P, C>`` s.t. ``P 1 = a``, ``P^T 1 <= b`` is solved
as a balanced transportation problem with one extra zero-cost source row (the
dummy) carrying the excess capacity ``sum(b) - 1``. The spanning tree is
rooted at the dummy node whose potential is pinned at zero, so the column
potentials come out nonpositive and coincide with the dual variables ``g`` of
the partial problem.

Node numbering: sources ``0..n-1``, the dummy ``n``, sinks ``n+1..n+m``.
Every non-root node ``x`` stores its parent and the flow on the tree edge
joining it to that parent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as _k
from .core import DualSolution, MarginalSpec, TransportPlan, as_cost_array
from .errors import InfeasibleError, InvalidInputError, InvalidStateError

PIVOT_TOL = 1e-10
REDUCED_COST_TOL = 1e-9
FEASIBILITY_TOL = 1e-12
#: Consecutive degenerate pivots after which Bland's rule takes over.
BLAND_AFTER = 5000
#: Pricing block size; 0 picks about sqrt(#arcs).
PRICING_BLOCK = 0


@dataclass(eq=False)
class SimplexState:
    """Basic feasible solution of the dummy-augmented transportation problem.

    ``u`` holds the row potentials (``u[n]`` is the dummy, always 0) and ``v``
    the column potentials; at optimality ``f = u[:n]`` and ``g = v`` solve
    the dual of the partial problem.
    """

    cost: np.ndarray
    a: np.ndarray
    b: np.ndarray
    parent: np.ndarray
    flow: np.ndarray
    depth: np.ndarray
    first_child: np.ndarray
    next_sib: np.ndarray
    prev_sib: np.ndarray
    u: np.ndarray
    v: np.ndarray
    objective: float = float("nan")
    optimal: bool = False
    pivots: int = 0
    degenerate_pivots: int = 0
    warm_started: bool = False

    @property
    def n(self) -> int:
        return self.cost.shape[0]

    @property
    def m(self) -> int:
        return self.cost.shape[1]

    @property
    def root(self) -> int:
        return self.n

    @property
    def f(self) -> np.ndarray:
        return self.u[: self.n].copy()

    @property
    def g(self) -> np.ndarray:
        return self.v.copy()

    @property
    def duals(self) -> DualSolution:
        return DualSolution(self.f, self.g)

    def _arcs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n1 = self.n + 1
        x = np.delete(np.arange(self.parent.size), self.root)
        p = self.parent[x]
        is_src = x < n1
        rows = np.where(is_src, x, p)
        cols = np.where(is_src, p, x) - n1
        return rows, cols, x

    def basis(self) -> list[tuple[int, int]]:
        """Basic arcs as (row, column); row ``n`` is the dummy."""
        rows, cols, _ = self._arcs()
        return sorted(zip(rows.tolist(), cols.tolist()))

    def full_plan(self) -> np.ndarray:
        """Plan including the dummy row, shape (n + 1, m)."""
        P = np.zeros((self.n + 1, self.m))
        rows, cols, x = self._arcs()
        P[rows, cols] = self.flow[x]
        return P

    @property
    def plan(self) -> np.ndarray:
        return self.full_plan()[: self.n]

    @property
    def transport_plan(self) -> TransportPlan:
        return TransportPlan(self.plan)

    def dual_objective(self) -> float:
        return float(self.u[: self.n] @ self.a + self.v @ self.b)

    def copy(self) -> "SimplexState":
        return SimplexState(
            cost=self.cost, a=self.a, b=self.b,
            parent=self.parent.copy(), flow=self.flow.copy(), depth=self.depth.copy(),
            first_child=self.first_child.copy(), next_sib=self.next_sib.copy(),
            prev_sib=self.prev_sib.copy(), u=self.u.copy(), v=self.v.copy(),
            objective=self.objective, optimal=self.optimal, pivots=self.pivots,
            degenerate_pivots=self.degenerate_pivots, warm_started=self.warm_started,
        )

    def _tree_arrays(self):
        return (self.parent, self.flow, self.depth, self.first_child,
                self.next_sib, self.prev_sib, self.u, self.v)


def _empty_state(C, a, b) -> SimplexState:
    n, m = C.shape
    N = n + 1 + m
    idx = lambda: np.full(N, -1, dtype=np.int64)  # noqa: E731
    return SimplexState(cost=C, a=a, b=b, parent=idx(), flow=np.zeros(N),
                        depth=np.zeros(N, dtype=np.int64), first_child=idx(),
                        next_sib=idx(), prev_sib=idx(), u=np.zeros(n + 1), v=np.zeros(m))


def _initial_state(C: np.ndarray, a: np.ndarray, b: np.ndarray) -> SimplexState:
    """Least-cost starting basis; dummy arcs are filled last."""
    n, m = C.shape
    order = np.argsort(C, axis=None, kind="stable").astype(np.int64)
    es, et, ef = _k.least_cost_edges(C, a, b, order)
    st = _empty_state(C, a, b)
    reached = _k.build_tree(n, m, es, et, ef, st.parent, st.flow, st.depth,
                            st.first_child, st.next_sib, st.prev_sib)
    if reached != n + 1 + m:
        raise InvalidStateError("initial basis is not spanning")
    worst = _k.recompute_flows(n, m, a, b, st.parent, st.flow, st.first_child, st.next_sib)
    if worst < -1e-9:
        raise InvalidStateError(f"initial basis is infeasible (flow {worst:.3e})")
    _k.recompute_potentials(C, n, m, st.parent, st.depth, st.first_child, st.next_sib, st.u, st.v)
    return st


def _warm_state(warm: SimplexState, C: np.ndarray, a: np.ndarray, b: np.ndarray):
    n, m = C.shape
    m_old = warm.m
    if warm.n != n or m < m_old or not warm.optimal:
        return None
    if not np.array_equal(warm.a, a):
        return None
    if not np.array_equal(C[:, :m_old], warm.cost):
        return None
    grow = b[:m_old] - warm.b
    if np.any(grow < -FEASIBILITY_TOL):
        return None
    st = warm.copy()
    st.cost, st.a, st.b = C, a, b
    st.optimal = False
    st.warm_started = True
    st.pivots = st.degenerate_pivots = 0
    if m > m_old:
        extra = m - m_old
        new_nodes = np.arange(n + 1 + m_old, n + 1 + m)
        st.parent = np.concatenate([st.parent, np.full(extra, st.root, dtype=np.int64)])
        st.flow = np.concatenate([st.flow, b[m_old:]])
        st.depth = np.concatenate([st.depth, np.ones(extra, dtype=np.int64)])
        # Prepend the new sinks to the root's child list.
        nxt = np.empty(extra, dtype=np.int64)
        nxt[:-1] = new_nodes[1:]
        nxt[-1] = st.first_child[st.root]
        prv = np.empty(extra, dtype=np.int64)
        prv[0] = -1
        prv[1:] = new_nodes[:-1]
        if st.first_child[st.root] != -1:
            st.prev_sib[st.first_child[st.root]] = new_nodes[-1]
        st.first_child = np.concatenate([st.first_child, np.full(extra, -1, dtype=np.int64)])
        st.first_child[st.root] = new_nodes[0]
        st.next_sib = np.concatenate([st.next_sib, nxt])
        st.prev_sib = np.concatenate([st.prev_sib, prv])
        st.v = np.concatenate([st.v, np.zeros(extra)])
    for t in np.flatnonzero(grow > 0.0).tolist():
        _k.route_extra_capacity(n, m, t, float(grow[t]), *st._tree_arrays(), PIVOT_TOL)
    return st


def _run_simplex(st: SimplexState, max_pivots: int) -> None:
    rc_tol = REDUCED_COST_TOL * max(1.0, float(st.cost.max(initial=0.0)))
    counters = np.zeros(2, dtype=np.int64)
    status = _k.run_simplex(st.cost, st.a, st.b, *st._tree_arrays(), rc_tol, PIVOT_TOL,
                            max_pivots, BLAND_AFTER, PRICING_BLOCK, counters)
    st.pivots += int(counters[0])
    st.degenerate_pivots += int(counters[1])
    if status == _k.PIVOT_CAP:
        raise InvalidStateError(f"simplex exceeded {max_pivots} pivots")
    if status == _k.INFEASIBLE_BASIS:
        raise InvalidStateError("basis lost primal feasibility")
    st.optimal = True
    rows, cols, x = st._arcs()
    real = rows < st.n
    st.objective = float(st.flow[x[real]] @ st.cost[rows[real], cols[real]])


def _as_marginals(marginals) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(marginals, MarginalSpec):
        return marginals.a, marginals.b
    a, b = marginals
    spec = MarginalSpec(a, b)
    return spec.a, spec.b


def solve_partial_ot(cost, marginals, warm: SimplexState | None = None,
                     max_pivots: int | None = None) -> SimplexState:
    """Solve ``min <P, C>`` over ``P 1 = a, P^T 1 <= b, P >= 0`` exactly.

    Parameters
    ----------
    cost : CostMatrix or array-like, shape (n, m)
    marginals : MarginalSpec or (a, b) pair
        ``a`` sums to one, ``sum(b) >= 1``.
    warm : SimplexState, optional
        Optimal state of an earlier solve. It is used as the starting basis
        when it stays feasible: same rows and source mass, its columns form a
        prefix of the new columns with identical costs, and no capacity of an
        old column shrank. Otherwise the solve starts cold.
    max_pivots : int, optional
        Safety cap on simplex pivots.

    Returns
    -------
    SimplexState
        Optimal basis with plan, duals ``f`` (rows) and ``g`` (columns,
        nonpositive) and the optimal objective.
    """
    C = as_cost_array(cost)
    if np.any(C < 0):
        raise InvalidInputError("cost matrix has negative entries")
    a, b = _as_marginals(marginals)
    n, m = C.shape
    if a.size != n or b.size != m:
        raise InvalidInputError(f"marginal sizes ({a.size}, {b.size}) do not match cost {C.shape}")
    if b.sum() < 1.0 - FEASIBILITY_TOL:
        raise InfeasibleError(f"target capacity {b.sum():.12g} < 1: source mass cannot be shipped")
    C = np.ascontiguousarray(C)
    st = None
    if warm is not None:
        st = _warm_state(warm, C, a, b)
    if st is None:
        st = _initial_state(C, a, b)
    if max_pivots is None:
        max_pivots = 50 * (n + m + 1) ** 2
    _run_simplex(st, max_pivots)
    return st


def partial_wasserstein(cost, marginals) -> float:
    return solve_partial_ot(cost, marginals).objective


def rhs_ranging(state: SimplexState, j: int) -> tuple[float, float]:
    """Interval of ``b_j`` over which the current basis stays optimal.

    Inside the returned ``(lower, upper)`` the optimal value is affine in
    ``b_j`` with slope ``state.g[j]``. Under degeneracy the interval may have
    zero width on one side.
    """
    if not state.optimal:
        raise InvalidStateError("ranging requires an optimal state")
    if not 0 <= j < state.m:
        raise IndexError(f"column {j} out of range 0..{state.m - 1}")
    n1 = state.n + 1
    up = down = np.inf
    x = n1 + j
    while x != state.root:
        fx = state.flow[x]
        if x < n1:
            up = min(up, fx)
        else:
            down = min(down, fx)
        x = state.parent[x]
    bj = float(state.b[j])
    return max(bj - down, 0.0), bj + up


def c_transform(state: SimplexState, cost, j: int) -> float:
    """Largest dual value of column ``j`` given the state's row potentials:
    ``min(0, min_i C[i, j] - f_i)``."""
    C = as_cost_array(cost)
    if C.shape[0] != state.n:
        raise InvalidInputError(f"cost has {C.shape[0]} rows, state has {state.n}")
    if not 0 <= j < C.shape[1]:
        raise IndexError(f"column {j} out of range 0..{C.shape[1] - 1}")
    return min(0.0, float(np.min(C[:, j] - state.u[: state.n])))


def c_transform_all(state: SimplexState, cost) -> np.ndarray:
    """Vectorized :func:`c_transform` over every column of ``cost``."""
    C = as_cost_array(cost)
    if C.shape[0] != state.n:
        raise InvalidInputError(f"cost has {C.shape[0]} rows, state has {state.n}")
    return np.minimum(0.0, (C - state.u[: state.n, None]).min(axis=0))
