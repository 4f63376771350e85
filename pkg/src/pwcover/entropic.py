"""Entropic partial optimal transport by log-domain generalized Sinkhorn.

The regularized problem is

    min <P, C> + eps * sum_ij P_ij (log P_ij - 1)   s.t.  P 1 = a,  P^T 1 <= b

and the scalings are stored as potentials ``f = eps log u``, ``g = eps log v``
so that tiny ``eps`` never underflows ``exp(-C / eps)``. The inequality side is
handled by clamping ``v <= 1``, i.e. ``g <= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _kernels as _k
from .core import MarginalSpec, TransportPlan, as_cost_array
from .errors import InfeasibleError, InvalidInputError, InvalidStateError

#: Default regularization, relative to ``max C``.
DEFAULT_EPSILON = 0.01
#: Row error above which the sweep output is polished by Newton steps.
POLISH_TOL = 1e-9
#: Sweeps between stall checks.
SWEEP_CHUNK = 1000
#: Newton step cap of the polish.
MAX_NEWTON = 60


@dataclass(frozen=True)
class SinkhornConfig:
    """Stopping rule.

    Sweeps stop once ``<P, C>`` changes by less than ``tol_factor * max C``
    between sweeps with the row error at most ``POLISH_TOL``, when the row
    error stalls, or after ``max_iter`` sweeps.
    Output with row error above ``POLISH_TOL`` then gets Newton steps from the
    remaining budget. A state is converged when its optimality residual is at
    most ``marginal_tol``.
    """

    tol_factor: float = 1e-12
    max_iter: int = 50_000
    marginal_tol: float = 1e-6

    def __post_init__(self):
        if not self.tol_factor > 0 or not self.marginal_tol > 0:
            raise InvalidInputError("tolerances must be positive")
        if self.max_iter < 1:
            raise InvalidInputError("max_iter must be >= 1")


@dataclass(eq=False)
class SinkhornState:
    """Potentials and diagnostics of one Sinkhorn run.

    ``log_u = f / eps`` and ``log_v = g / eps`` are the log scalings; ``value``
    is the unregularized cost ``<P, C>`` of the regularized plan.
    ``iterations`` counts sweeps plus ``newton_steps``; ``history`` holds the
    dual objective after each sweep.
    """

    cost: np.ndarray
    a: np.ndarray
    b: np.ndarray
    epsilon: float
    f: np.ndarray
    g: np.ndarray
    value: float = float("nan")
    iterations: int = 0
    converged: bool = False
    newton_steps: int = 0
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def log_u(self) -> np.ndarray:
        return self.f / self.epsilon

    @property
    def log_v(self) -> np.ndarray:
        return self.g / self.epsilon

    @property
    def u(self) -> np.ndarray:
        return np.exp(self.log_u)

    @property
    def v(self) -> np.ndarray:
        return np.exp(self.log_v)

    @property
    def plan(self) -> np.ndarray:
        return np.exp((self.f[:, None] + self.g[None, :] - self.cost) / self.epsilon)

    @property
    def transport_plan(self) -> TransportPlan:
        return TransportPlan(self.plan)

    def entropy_term(self) -> float:
        P = self.plan
        with np.errstate(divide="ignore", invalid="ignore"):
            logP = np.where(P > 0, np.log(P), 0.0)
        return float(np.sum(P * (logP - 1.0)))

    def primal_objective(self) -> float:
        """``<P, C> + eps * sum P (log P - 1)`` at the current potentials."""
        return self.value + self.epsilon * self.entropy_term()

    def dual_objective(self) -> float:
        """``<f, a> + <g, b> - eps * sum P``; equals the regularized optimum at
        convergence."""
        with np.errstate(invalid="ignore"):
            gb = np.where(self.b > 0, self.g * self.b, 0.0)
        return float(self.f @ self.a + gb.sum() - self.epsilon * self.plan.sum())

    @property
    def regularized_value(self) -> float:
        return self.dual_objective()


def _as_marginals(marginals) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(marginals, MarginalSpec):
        return marginals.a, marginals.b
    a, b = marginals
    spec = MarginalSpec(a, b)
    return spec.a, spec.b


def _semi_dual(C, log_a, b, g, eps):
    """Row-exact ``f`` for fixed ``g``, the semi-dual value and column sums."""
    Z = (g[None, :] - C) / eps
    lse = logsumexp(Z, axis=1)
    f = eps * (log_a - lse)
    P = np.exp(Z + (log_a - lse)[:, None])
    live = b > 0
    val = float(f @ np.exp(log_a) + g[live] @ b[live])
    return f, val, P


def _row_error(C, a, f, g, eps) -> float:
    return float(np.abs(np.exp((f[:, None] + g[None, :] - C) / eps).sum(axis=1) - a).max())


def _kkt_residual(b, g, c, tau):
    at_bound = g >= -tau
    r = np.where(at_bound, np.maximum(c - b, 0.0), np.abs(c - b))
    return float(r.max(initial=0.0))


def _newton_polish(C, log_a, b, g, eps, max_steps=MAX_NEWTON, target=1e-14):
    """Projected Newton ascent on the semi-dual over ``g <= 0``.

    Alternating sweeps slow to a crawl on near-degenerate instances; a few
    second-order steps from the sweep output finish the job. Coordinates
    within a shrinking band of the bound whose gradient points outward are
    held at the bound and the rest take a Newton step, with backtracking
    along the projection arc. Returns the polished ``g``, row-exact ``f``,
    the step count and the optimality residual.
    """
    live = b > 0
    idx = np.flatnonzero(live)
    bl = b[idx]
    gl = g[idx].copy()
    Cl = C[:, idx]
    a = np.exp(log_a)
    span = float(C.max(initial=0.0) - C.min(initial=0.0)) + eps
    f, val, P = _semi_dual(Cl, log_a, bl, gl, eps)
    c = P.sum(axis=0)
    res = _kkt_residual(bl, gl, c, 1e-12 * eps)
    steps = 0
    while steps < max_steps and res > target:
        grad = bl - c
        band = min(eps, float(np.abs(gl - np.minimum(gl + eps * grad, 0.0)).max()))
        held = (gl >= -band) & (grad > 0.0)
        free = ~held
        d = np.zeros_like(gl)
        if free.any():
            Pf = P[:, free]
            M = np.diag(c[free]) - Pf.T @ (Pf / a[:, None])
            M[np.diag_indices_from(M)] += 1e-13 * max(float(c[free].max()), 1e-300)
            try:
                d[free] = eps * np.linalg.solve(M, grad[free])
            except np.linalg.LinAlgError:
                d[free] = eps * np.linalg.lstsq(M, grad[free], rcond=None)[0]
        d[held] = span
        # Flat directions give huge steps; no potential moves further than the cost range.
        big = float(np.abs(d[free]).max(initial=0.0))
        if big > span:
            d[free] *= span / big
        t = 1.0
        accepted = False
        while t >= 1e-12:
            trial = np.minimum(gl + t * d, 0.0)
            ft, vt, Pt = _semi_dual(Cl, log_a, bl, trial, eps)
            if vt >= val + 1e-4 * float(grad @ (trial - gl)) and vt >= val:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        gl, f, val, P = trial, ft, vt, Pt
        c = P.sum(axis=0)
        res = _kkt_residual(bl, gl, c, 1e-12 * eps)
        steps += 1
    out = g.copy()
    out[idx] = gl
    out[~live] = -np.inf
    return out, f, steps, res


def absolute_epsilon(cost, epsilon: float) -> float:
    """Convert ``epsilon`` relative to ``max C`` into absolute units."""
    C = as_cost_array(cost)
    cmax = float(C.max(initial=0.0))
    return epsilon * cmax if cmax > 0 else epsilon


def sinkhorn_partial_ot(cost, marginals, epsilon: float = DEFAULT_EPSILON,
                        cfg: SinkhornConfig | None = None,
                        warm: SinkhornState | None = None) -> SinkhornState:
    """Entropic partial OT by alternating scaling updates.

    Parameters
    ----------
    cost : CostMatrix or array-like, shape (n, m)
    marginals : MarginalSpec or (a, b) pair
    epsilon : float
        Regularization relative to ``max C`` (absolute when ``C`` is all zero).
    cfg : SinkhornConfig, optional
    warm : SinkhornState, optional
        Potentials to start from; used when its shapes match.

    Returns
    -------
    SinkhornState
        ``converged`` is False when the iteration cap was reached.
    """
    if not epsilon > 0:
        raise InvalidInputError("epsilon must be positive")
    cfg = cfg or SinkhornConfig()
    C = as_cost_array(cost)
    if np.any(C < 0):
        raise InvalidInputError("cost matrix has negative entries")
    a, b = _as_marginals(marginals)
    n, m = C.shape
    if a.size != n or b.size != m:
        raise InvalidInputError(f"marginal sizes ({a.size}, {b.size}) do not match cost {C.shape}")
    if b.sum() < 1.0 - 1e-12:
        raise InfeasibleError(f"target capacity {b.sum():.12g} < 1")
    cmax = float(C.max(initial=0.0))
    eps = absolute_epsilon(C, epsilon)
    tol = cfg.tol_factor * cmax if cmax > 0 else cfg.tol_factor

    with np.errstate(divide="ignore"):
        log_a = np.log(a)
        log_b = np.log(b)
    if warm is not None and warm.f.shape == (n,) and warm.g.shape[0] <= m:
        # Columns added since the warm run start unclamped-neutral (g = 0).
        g = np.zeros(m)
        g[: warm.g.size] = warm.g * (eps / warm.epsilon)
        g = np.minimum(g, 0.0)
    else:
        g = np.zeros(m)
    f = np.zeros(n)
    history = np.empty(cfg.max_iter)
    # With sum b == 1 every column is tight. The clamp would then only fight the
    # (f + c, g - c) invariance and stall, so run balanced sweeps and shift after.
    balanced = abs(b.sum() - 1.0) <= 1e-12
    Cc = np.ascontiguousarray(C)
    it = newton = sweeps = 0
    value = float("nan")
    res = last_err = np.inf
    while it < cfg.max_iter:
        chunk = min(SWEEP_CHUNK, cfg.max_iter - it)
        done, rule, value = _k.sinkhorn_log(Cc, log_a, log_b, a, b, f, g, eps, tol, POLISH_TOL,
                                            chunk, history[sweeps:], not balanced)
        it += done
        sweeps += done
        if balanced:
            shift = max(float(g.max()), 0.0)
            g -= shift
            f += shift
        # After a column update the column side is feasible and complementary,
        # so the row error is the whole optimality residual.
        res = _row_error(C, a, f, g, eps)
        if rule:
            break
        if res > 0.5 * last_err and res > POLISH_TOL and it < cfg.max_iter:
            budget = min(MAX_NEWTON, cfg.max_iter - it)
            g2, f2, steps, res2 = _newton_polish(C, log_a, b, g, eps, budget)
            it += steps
            newton += steps
            if res2 <= min(res, cfg.marginal_tol):
                g[:], f[:], res = g2, f2, res2
                value = float(np.sum(np.exp((f[:, None] + g[None, :] - C) / eps) * C))
                break
        last_err = res
    converged = res <= cfg.marginal_tol
    history = history[:sweeps].tolist()
    return SinkhornState(cost=C, a=a, b=b, epsilon=eps, f=f, g=g, value=value,
                         iterations=it, converged=converged, history=history,
                         newton_steps=newton)


def grad_b(state: SinkhornState) -> np.ndarray:
    """Derivative of the regularized optimal value with respect to ``b``.

    By the envelope theorem on the dual this is ``g = eps log v``, which is
    zero on columns whose scaling is clamped (received mass below capacity).

    Raises
    ------
    InvalidStateError
        If ``state`` did not converge.
    """
    if not state.converged:
        raise InvalidStateError("gradient requires a converged Sinkhorn state")
    return state.g.copy()
