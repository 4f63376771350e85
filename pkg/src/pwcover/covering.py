"""Covering objective and the selection algorithms built on it.

For an application set ``X``, a development set ``Y`` and candidates ``S``,

    phi(S) = PW2(X, Y) - PW2(X, S u Y)

where every target point carries mass ``1 / N_dev``. ``phi`` is monotone and
submodular, which is what makes the greedy family work.

Two linear systems appear below:

* the *reduced* system has columns ``dev`` then the selected candidates in
  pick order, with exact capacities ``1 / N_dev``; it defines ``phi`` and the
  ``pw_values`` of every trace;
* the *full* system has columns ``cand`` then ``dev`` with unselected
  candidates at ``b_floor``; it only serves the sensitivity heuristics that
  need a dual value for every candidate.
"""

from __future__ import annotations

import hashlib
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import (CostMatrix, Dataset, Role, as_dataset, build_marginals, default_b_floor,
                   squared_euclidean_cost)
from .entropic import DEFAULT_EPSILON, SinkhornConfig, grad_b, sinkhorn_partial_ot
from .errors import DeadlineExceededError, InvalidInputError, SizeCapError
from .exact import SimplexState, c_transform_all, rhs_ranging, solve_partial_ot

ALGORITHMS = ("exact", "greedy-lp", "greedy-ent", "sensitivity-lp", "sensitivity-ctrans",
              "sensitivity-ent", "random", "farthest")

#: Greedy stops once the best marginal gain is at most this.
GAIN_TOL = 1e-12
#: Default cap on the number of subsets :func:`exact_select` may visit.
ENUMERATION_CAP = 2_000_000


def _check_deadline(deadline: float | None) -> None:
    if deadline is not None and time.perf_counter() > deadline:
        raise DeadlineExceededError("wall-clock budget exhausted")


def default_threads() -> int:
    """Worker count for candidate scoring, bounded by ``PWCOVER_THREADS``."""
    raw = os.environ.get("PWCOVER_THREADS")
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise InvalidInputError(f"PWCOVER_THREADS must be an integer, got {raw!r}") from None


@dataclass(frozen=True, eq=False)
class CoveringInstance:
    """Application, development and candidate sets plus the selection budget.

    ``C`` is the cost from application rows to candidate columns followed by
    development columns. Leaving ``cand`` as None uses the application set.
    """

    app: Dataset
    dev: Dataset
    cand: Dataset | None = None
    K: int = 1
    b_floor: float | None = None
    C: CostMatrix | None = None

    def __post_init__(self):
        app = as_dataset(self.app, Role.APP)
        dev = as_dataset(self.dev, Role.DEV)
        cand = app if self.cand is None else as_dataset(self.cand, Role.CAND)
        cand = Dataset(cand.points, Role.CAND)
        if len(app) == 0 or len(dev) == 0:
            raise InvalidInputError("application and development sets must be non-empty")
        if not (app.dim == dev.dim == cand.dim):
            raise InvalidInputError(f"dimension mismatch: app d={app.dim}, dev d={dev.dim}, "
                                    f"cand d={cand.dim}")
        K = int(self.K)
        if not 0 <= K <= len(cand):
            raise InvalidInputError(f"budget K={K} must lie in 0..{len(cand)}")
        floor = default_b_floor(len(dev)) if self.b_floor is None else float(self.b_floor)
        if not floor > 0:
            raise InvalidInputError("b_floor must be positive")
        C = self.C
        if C is None:
            C = squared_euclidean_cost(app, cand.concat(dev))
        elif not isinstance(C, CostMatrix):
            C = CostMatrix(C)
        if C.shape != (len(app), len(cand) + len(dev)):
            raise InvalidInputError(f"cost shape {C.shape} does not match "
                                    f"({len(app)}, {len(cand) + len(dev)})")
        for name, val in (("app", app), ("dev", dev), ("cand", cand), ("K", K),
                          ("b_floor", floor), ("C", C)):
            object.__setattr__(self, name, val)

    @property
    def n_app(self) -> int:
        return len(self.app)

    @property
    def n_dev(self) -> int:
        return len(self.dev)

    @property
    def n_cand(self) -> int:
        return len(self.cand)

    @property
    def a(self) -> np.ndarray:
        return np.full(self.n_app, 1.0 / self.n_app)

    @property
    def C_cand(self) -> np.ndarray:
        return self.C.entries[:, : self.n_cand]

    @property
    def C_dev(self) -> np.ndarray:
        return self.C.entries[:, self.n_cand:]

    def with_budget(self, K: int) -> "CoveringInstance":
        return CoveringInstance(self.app, self.dev, self.cand, K, self.b_floor, self.C)

    def fingerprint(self) -> str:
        h = hashlib.sha1()
        h.update(np.asarray(self.C.shape, dtype=np.int64).tobytes())
        h.update(self.C.entries.tobytes())
        h.update(np.float64(self.b_floor).tobytes())
        return h.hexdigest()

    def full_marginals(self, S: Iterable[int] = ()):
        return build_marginals(self.n_app, self.n_dev, self.n_cand, S, self.b_floor)

    def reduced_cost(self, S: Sequence[int]) -> np.ndarray:
        return np.hstack([self.C_dev, self.C_cand[:, list(S)]])

    def reduced_marginals(self, size: int) -> tuple[np.ndarray, np.ndarray]:
        return self.a, np.full(self.n_dev + size, 1.0 / self.n_dev)


@dataclass
class SelectionTrace:
    """Result of one selection run.

    ``pw_values[t]`` is the exact divergence after the first ``t`` picks
    (``pw_values[0]`` is the empty selection) and ``phi_values[t]`` the
    corresponding gain. ``wall_times[t]`` is the time in seconds spent
    producing pick ``t``; evaluation of ``pw_values`` for algorithms that do
    not need it is excluded.
    """

    algorithm: str
    k: int
    chosen: list[int] = field(default_factory=list)
    pw_values: list[float] = field(default_factory=list)
    phi_values: list[float] = field(default_factory=list)
    wall_times: list[float] = field(default_factory=list)
    converged: bool = True
    early_stopped: bool = False
    instance_key: str = ""
    steps: list[dict] = field(default_factory=list)

    @property
    def phi(self) -> float:
        return self.phi_values[-1] if self.phi_values else 0.0

    @property
    def pw(self) -> float:
        return self.pw_values[-1]

    @property
    def total_time(self) -> float:
        return float(sum(self.wall_times))


# -- divergence evaluation ---------------------------------------------------------------

def _reduced_lp(inst: CoveringInstance, S: Sequence[int],
                warm: SimplexState | None = None) -> SimplexState:
    return solve_partial_ot(inst.reduced_cost(S), inst.reduced_marginals(len(S)), warm=warm)


def pw_divergence(inst: CoveringInstance, S: Iterable[int] = (), backend: str = "lp",
                  epsilon: float = DEFAULT_EPSILON, cfg: SinkhornConfig | None = None,
                  floored: bool = False) -> float:
    """``PW2(app, S u dev)``.

    With ``floored`` the full system is solved, unselected candidates keeping
    capacity ``b_floor``; otherwise only the selected columns take part.
    """
    S = _check_subset(inst, S)
    if floored:
        C, marg = inst.C, inst.full_marginals(S)
    else:
        C, marg = inst.reduced_cost(S), inst.reduced_marginals(len(S))
    if backend == "lp":
        return solve_partial_ot(C, marg).objective
    if backend == "ent":
        return sinkhorn_partial_ot(C, marg, epsilon, cfg).value
    raise InvalidInputError(f"unknown backend {backend!r}")


def objective_phi(inst: CoveringInstance, S: Iterable[int], backend: str = "lp",
                  epsilon: float = DEFAULT_EPSILON, cfg: SinkhornConfig | None = None,
                  floored: bool = False) -> float:
    """Covering gain ``PW2(app, dev) - PW2(app, S u dev)`` under ``backend``."""
    S = _check_subset(inst, S)
    base = pw_divergence(inst, (), backend, epsilon, cfg, floored)
    if not S:
        return 0.0
    return base - pw_divergence(inst, S, backend, epsilon, cfg, floored)


def _check_subset(inst: CoveringInstance, S: Iterable[int]) -> list[int]:
    S = [int(j) for j in S]
    if len(set(S)) != len(S):
        raise InvalidInputError("selection contains duplicates")
    for j in S:
        if not 0 <= j < inst.n_cand:
            raise InvalidInputError(f"candidate index {j} outside 0..{inst.n_cand - 1}")
    return S


def evaluate_prefixes(inst: CoveringInstance, chosen: Sequence[int]) -> list[float]:
    """Exact ``PW2`` of every prefix of ``chosen``, warm-started in sequence."""
    st = _reduced_lp(inst, [])
    values = [st.objective]
    for t in range(1, len(chosen) + 1):
        st = _reduced_lp(inst, chosen[:t], warm=st)
        values.append(st.objective)
    return values


def _finish(trace: SelectionTrace, inst: CoveringInstance, pw: list[float] | None = None):
    trace.pw_values = [float(x) for x in (pw if pw is not None else
                                          evaluate_prefixes(inst, trace.chosen))]
    trace.phi_values = [trace.pw_values[0] - x for x in trace.pw_values]
    trace.instance_key = inst.fingerprint()
    return trace


# -- exact oracle ----------------------------------------------------------------------

def count_subsets(n: int, K: int) -> int:
    return sum(math.comb(n, k) for k in range(K + 1))


def exact_select(inst: CoveringInstance, cap: int = ENUMERATION_CAP,
                 deadline: float | None = None) -> SelectionTrace:
    """Best subset of size at most ``K`` by exhaustive enumeration.

    Equal gains (within ``GAIN_TOL``) go to the shorter subset, then to the
    lexicographically smallest index list. The enumeration time is booked on
    the last pick.
    """
    total = count_subsets(inst.n_cand, inst.K)
    if total > cap:
        raise SizeCapError(f"{total} subsets exceed the enumeration cap {cap}")
    t0 = time.perf_counter()
    root = _reduced_lp(inst, [])
    best_val = root.objective
    best: tuple[int, ...] = ()

    def better(val: float, S: tuple[int, ...]) -> bool:
        if val < best_val - GAIN_TOL:
            return True
        if val > best_val + GAIN_TOL:
            return False
        return (len(S), S) < (len(best), best)

    # Depth-first over subsets in lexicographic order; each subset is solved
    # warm from its parent (one column appended).
    stack: list[tuple[tuple[int, ...], SimplexState]] = [((), root)]
    while stack:
        S, st = stack.pop()
        _check_deadline(deadline)
        if len(S) == inst.K:
            continue
        start = S[-1] + 1 if S else 0
        children = []
        for j in range(start, inst.n_cand):
            child = S + (j,)
            cst = _reduced_lp(inst, child, warm=st)
            if better(cst.objective, child):
                best_val, best = cst.objective, child
            children.append((child, cst))
        stack.extend(reversed(children))
    elapsed = time.perf_counter() - t0
    trace = SelectionTrace("exact", inst.K, chosen=list(best))
    trace.wall_times = [0.0] * len(best)
    if best:
        trace.wall_times[-1] = elapsed
    return _finish(trace, inst)


# -- greedy ----------------------------------------------------------------------------

def _score_lp_chunk(inst, base, S, cols, b):
    buf = np.empty((inst.n_app, inst.n_dev + len(S) + 1))
    buf[:, :-1] = base.cost
    best_j, best_state = -1, None
    best_val = np.inf
    for j in cols:
        buf[:, -1] = inst.C_cand[:, j]
        st = solve_partial_ot(buf, (inst.a, b), warm=base)
        if st.objective < best_val:
            best_j, best_val, best_state = j, st.objective, st
            best_state.cost = buf.copy()
    return best_j, best_val, best_state


def _score_ent_chunk(inst, base, S, cols, b, epsilon, cfg):
    best_j, best_state = -1, None
    best_val = np.inf
    all_conv = True
    for j in cols:
        C = inst.reduced_cost(list(S) + [j])
        st = sinkhorn_partial_ot(C, (inst.a, b), epsilon, cfg, warm=base)
        all_conv &= st.converged
        if st.value < best_val:
            best_j, best_val, best_state = j, st.value, st
    return best_j, best_val, best_state, all_conv


def _chunks(items: list[int], parts: int) -> list[list[int]]:
    parts = max(1, min(parts, len(items)))
    size = -(-len(items) // parts)
    return [items[i:i + size] for i in range(0, len(items), size)]


def greedy_select(inst: CoveringInstance, backend: str = "lp", epsilon: float = DEFAULT_EPSILON,
                  cfg: SinkhornConfig | None = None, threads: int | None = None,
                  deadline: float | None = None) -> SelectionTrace:
    """Plain greedy maximization of ``phi``.

    Each step scores every unselected candidate by re-solving with its column
    added (warm-started from the current selection) and keeps the largest
    gain, ties to the lowest index. Stops early when no gain exceeds
    ``GAIN_TOL``.
    """
    if backend not in ("lp", "ent"):
        raise InvalidInputError(f"unknown backend {backend!r}")
    threads = default_threads() if threads is None else max(1, int(threads))
    trace = SelectionTrace(f"greedy-{backend}", inst.K)
    S: list[int] = []
    if backend == "lp":
        base = _reduced_lp(inst, [])
        cur = base.objective
    else:
        base = sinkhorn_partial_ot(inst.reduced_cost([]), inst.reduced_marginals(0), epsilon, cfg)
        cur = base.value
        trace.converged = base.converged
    pw = [cur]
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for _ in range(inst.K):
            _check_deadline(deadline)
            t0 = time.perf_counter()
            chosen = set(S)
            free = [j for j in range(inst.n_cand) if j not in chosen]
            _, b = inst.reduced_marginals(len(S) + 1)
            parts = _chunks(free, threads)
            if backend == "lp":
                job = lambda cols: _score_lp_chunk(inst, base, S, cols, b)  # noqa: E731
            else:
                job = lambda cols: _score_ent_chunk(inst, base, S, cols, b, epsilon, cfg)  # noqa: E731
            results = list(pool.map(job, parts)) if pool else [job(c) for c in parts]
            best_j, best_val, best_state = -1, np.inf, None
            for res in results:
                if res[1] < best_val:
                    best_j, best_val, best_state = res[0], res[1], res[2]
                if backend == "ent":
                    trace.converged &= res[3]
            if best_j < 0 or cur - best_val <= GAIN_TOL:
                trace.early_stopped = True
                break
            S.append(best_j)
            base, cur = best_state, best_val
            trace.chosen.append(best_j)
            trace.wall_times.append(time.perf_counter() - t0)
            if backend == "lp":
                pw.append(cur)
    finally:
        if pool:
            pool.shutdown()
    return _finish(trace, inst, pw if backend == "lp" else None)


# -- quasi-greedy ----------------------------------------------------------------------

def sensitivity_lp_select(inst: CoveringInstance, deadline: float | None = None) -> SelectionTrace:
    """Pick the unselected candidate with the most negative dual ``g*_j``.

    Every step solves the full system (warm-started from the previous
    basis). ``steps`` records, per pick, the dual value, its ranging interval
    and the full-system objective before the pick.
    """
    trace = SelectionTrace("sensitivity-lp", inst.K)
    S: list[int] = []
    t0 = time.perf_counter()
    st = solve_partial_ot(inst.C, inst.full_marginals())
    for _ in range(inst.K):
        _check_deadline(deadline)
        g = st.g[: inst.n_cand].copy()
        g[S] = np.inf
        j = int(np.argmin(g))
        lower, upper = rhs_ranging(st, j)
        S.append(j)
        trace.steps.append({"j": j, "g": float(st.g[j]), "b": float(st.b[j]),
                            "lower": lower, "upper": upper, "objective": st.objective})
        trace.chosen.append(j)
        st = solve_partial_ot(inst.C, inst.full_marginals(S), warm=st)
        trace.steps[-1]["objective_after"] = st.objective
        now = time.perf_counter()
        trace.wall_times.append(now - t0)
        t0 = now
    return _finish(trace, inst)


def sensitivity_ctrans_select(inst: CoveringInstance,
                              deadline: float | None = None) -> SelectionTrace:
    """Pick the candidate whose C-transform dual ``min(0, min_i C_ij - f_i)``
    is most negative, given the potentials of the reduced system."""
    trace = SelectionTrace("sensitivity-ctrans", inst.K)
    S: list[int] = []
    t0 = time.perf_counter()
    st = _reduced_lp(inst, [])
    pw = [st.objective]
    for _ in range(inst.K):
        _check_deadline(deadline)
        gc = c_transform_all(st, inst.C_cand)
        gc[S] = np.inf
        j = int(np.argmin(gc))
        trace.steps.append({"j": j, "g_ctrans": float(gc[j])})
        S.append(j)
        trace.chosen.append(j)
        st = _reduced_lp(inst, S, warm=st)
        pw.append(st.objective)
        now = time.perf_counter()
        trace.wall_times.append(now - t0)
        t0 = now
    return _finish(trace, inst, pw)


def sensitivity_ent_select(inst: CoveringInstance, epsilon: float = DEFAULT_EPSILON,
                           cfg: SinkhornConfig | None = None,
                           deadline: float | None = None) -> SelectionTrace:
    """Pick the candidate with the most negative entropic gradient in ``b``.

    When a Sinkhorn run hits its cap the current potentials are still used
    and the trace is flagged as not converged.
    """
    trace = SelectionTrace("sensitivity-ent", inst.K)
    S: list[int] = []
    t0 = time.perf_counter()
    st = sinkhorn_partial_ot(inst.C, inst.full_marginals(), epsilon, cfg)
    for _ in range(inst.K):
        _check_deadline(deadline)
        trace.converged &= st.converged
        grad = grad_b(st) if st.converged else st.g.copy()
        grad = grad[: inst.n_cand]
        grad[S] = np.inf
        j = int(np.argmin(grad))
        trace.steps.append({"j": j, "grad": float(st.g[j])})
        S.append(j)
        trace.chosen.append(j)
        st = sinkhorn_partial_ot(inst.C, inst.full_marginals(S), epsilon, cfg, warm=st)
        now = time.perf_counter()
        trace.wall_times.append(now - t0)
        t0 = now
    trace.converged &= st.converged
    return _finish(trace, inst)


# -- baselines -------------------------------------------------------------------------

def baseline_random(inst: CoveringInstance, seed: int = 0) -> SelectionTrace:
    """``K`` candidates sampled uniformly without replacement."""
    t0 = time.perf_counter()
    perm = np.random.default_rng(seed).permutation(inst.n_cand)[: inst.K]
    trace = SelectionTrace("random", inst.K, chosen=[int(j) for j in perm])
    trace.wall_times = [(time.perf_counter() - t0) / max(1, inst.K)] * inst.K
    return _finish(trace, inst)


def baseline_farthest(inst: CoveringInstance) -> SelectionTrace:
    """Repeatedly pick the candidate farthest from ``dev`` and earlier picks."""
    trace = SelectionTrace("farthest", inst.K)
    t0 = time.perf_counter()
    nearest = squared_euclidean_cost(inst.cand, inst.dev).entries.min(axis=1)
    pts = inst.cand.points
    for _ in range(inst.K):
        score = nearest.copy()
        score[trace.chosen] = -np.inf
        j = int(np.argmax(score))
        trace.chosen.append(j)
        nearest = np.minimum(nearest, ((pts - pts[j]) ** 2).sum(axis=1))
        now = time.perf_counter()
        trace.wall_times.append(now - t0)
        t0 = now
    return _finish(trace, inst)


def run_algorithm(inst: CoveringInstance, algorithm: str, seed: int = 0,
                  epsilon: float = DEFAULT_EPSILON, cfg: SinkhornConfig | None = None,
                  cap: int = ENUMERATION_CAP, threads: int | None = None,
                  deadline: float | None = None) -> SelectionTrace:
    """Dispatch by algorithm name (see :data:`ALGORITHMS`).

    ``deadline`` is a :func:`time.perf_counter` timestamp checked between
    steps; overrunning it raises :class:`DeadlineExceededError`.
    """
    if algorithm == "exact":
        return exact_select(inst, cap, deadline)
    if algorithm == "greedy-lp":
        return greedy_select(inst, "lp", threads=threads, deadline=deadline)
    if algorithm == "greedy-ent":
        return greedy_select(inst, "ent", epsilon, cfg, threads, deadline)
    if algorithm == "sensitivity-lp":
        return sensitivity_lp_select(inst, deadline)
    if algorithm == "sensitivity-ctrans":
        return sensitivity_ctrans_select(inst, deadline)
    if algorithm == "sensitivity-ent":
        return sensitivity_ent_select(inst, epsilon, cfg, deadline)
    if algorithm == "random":
        return baseline_random(inst, seed)
    if algorithm == "farthest":
        return baseline_farthest(inst)
    raise InvalidInputError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")


def empirical_approx_ratio(trace: SelectionTrace, oracle: SelectionTrace) -> float:
    """``phi(trace) / phi(oracle)``, or 1 when both gains vanish."""
    if trace.instance_key != oracle.instance_key:
        raise InvalidInputError("trace and oracle come from different instances")
    if trace.k != oracle.k:
        raise InvalidInputError(f"budget mismatch: {trace.k} vs {oracle.k}")
    num, den = trace.phi, oracle.phi
    if abs(den) <= GAIN_TOL:
        return 1.0
    return num / den
