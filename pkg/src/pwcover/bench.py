"""Experiment harness: divergence curves, timing sweeps, the missing-cluster
experiment and a submodularity fuzzer on synthetic data."""

from __future__ import annotations

import csv
import json
import math
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .covering import (ALGORITHMS, ENUMERATION_CAP, CoveringInstance, SelectionTrace,
                       objective_phi, run_algorithm)
from .entropic import DEFAULT_EPSILON
from .errors import InvalidInputError, PWCoverError

GENERATORS = ("gaussian2d", "gaussian-mixture-missing-cluster", "from-file")
KINDS = ("curve", "timing", "missing-category", "submodularity")
#: Label of the cluster the development set lacks.
MISSING_LABEL = 2
#: Slack allowed when comparing divergence curves pointwise.
CURVE_TOL = 1e-9
SCHEMA_VERSION = 1


# -- generators ------------------------------------------------------------------------

def gaussian2d(n_app: int, n_dev: int, n_cand: int, rng: np.random.Generator):
    """App ``N(0, I)``, dev ``N((1, 0), 0.5 I)``.

    Candidates are the application points when ``n_cand == n_app``, otherwise
    fresh draws from the application distribution. Labels are all zero.
    """
    app = rng.normal(size=(n_app, 2))
    dev = rng.normal(size=(n_dev, 2)) * math.sqrt(0.5) + np.array([1.0, 0.0])
    cand = app if n_cand == n_app else rng.normal(size=(n_cand, 2))
    return app, dev, cand, np.zeros(n_cand, dtype=np.int64)


CLUSTER_CENTERS = np.array([[0.0, 0.0], [4.0, 0.0], [2.0, 2.0 * math.sqrt(3.0)]])


def missing_cluster(n_app: int, n_dev: int, n_cand: int, rng: np.random.Generator,
                    p_missing: float = 0.005):
    """Three unit-variance clusters on an equilateral triangle of side 4.

    The application set is balanced over labels 0, 1, 2; the development set
    draws label 2 only with probability ``p_missing`` and splits the rest
    evenly between 0 and 1. Candidates are the application points when
    ``n_cand == n_app``, otherwise a fresh balanced draw.
    """
    def balanced(n):
        labels = rng.permutation(np.arange(n) % 3)
        return CLUSTER_CENTERS[labels] + rng.normal(size=(n, 2)), labels

    app, app_labels = balanced(n_app)
    miss = rng.random(n_dev) < p_missing
    dev_labels = np.where(miss, MISSING_LABEL, rng.integers(0, 2, size=n_dev))
    dev = CLUSTER_CENTERS[dev_labels] + rng.normal(size=(n_dev, 2))
    if n_cand == n_app:
        cand, labels = app, app_labels
    else:
        cand, labels = balanced(n_cand)
    return app, dev, cand, labels


# -- configuration ---------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Everything needed to rerun an experiment deterministically.

    ``sizes`` is ``(N_app, N_dev, N_cand)``; timing runs sweep ``size_sweep``
    (each entry a common ``N``) instead.
    """

    name: str = "experiment"
    kind: str = "curve"
    generator: str = "gaussian2d"
    sizes: tuple[int, int, int] = (30, 30, 30)
    K: int = 10
    algorithms: list[str] = field(default_factory=lambda: ["greedy-lp", "random"])
    seeds: list[int] = field(default_factory=lambda: [0])
    epsilon: float = DEFAULT_EPSILON
    b_floor: float | None = None
    cap: int = ENUMERATION_CAP
    timeout_s: float = 600.0
    repetitions: int = 5
    size_sweep: list[int] = field(default_factory=list)
    files: dict[str, str] = field(default_factory=dict)
    p_missing: float = 0.005
    trials: int = 500
    pairs: int = 10

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        self.algorithms = list(self.algorithms)
        self.seeds = [int(s) for s in self.seeds]
        self.size_sweep = [int(s) for s in self.size_sweep]
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown experiment kind {self.kind!r}")
        if self.generator not in GENERATORS:
            raise InvalidInputError(f"unknown generator {self.generator!r}")
        if len(self.sizes) != 3 or any(s <= 0 for s in self.sizes):
            raise InvalidInputError(f"sizes must be three positive counts, got {self.sizes}")
        if any(s <= 0 for s in self.size_sweep):
            raise InvalidInputError("size_sweep entries must be positive")
        if not self.seeds:
            raise InvalidInputError("seeds must be non-empty")
        if self.kind != "submodularity":
            if not self.algorithms:
                raise InvalidInputError("algorithms must be non-empty")
            bad = [a for a in self.algorithms if a not in ALGORITHMS]
            if bad:
                raise InvalidInputError(f"unknown algorithms {bad}")
        if self.K < 0:
            raise InvalidInputError("K must be nonnegative")
        if not self.epsilon > 0:
            raise InvalidInputError("epsilon must be positive")
        if self.repetitions < 1 or self.timeout_s <= 0:
            raise InvalidInputError("repetitions and timeout_s must be positive")
        if self.generator == "from-file" and not {"app", "dev"} <= set(self.files):
            raise InvalidInputError("from-file generator needs files.app and files.dev")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise InvalidInputError("config must be a mapping")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidInputError):
                raise
            raise InvalidInputError(f"bad config: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["sizes"] = list(self.sizes)
        return d


def make_instance(cfg: ExperimentConfig, seed: int, sizes: tuple[int, int, int] | None = None,
                  base_dir: Path | None = None):
    """Build the covering instance (budget ``cfg.K`` clipped to ``N_cand``) and
    the candidate labels."""
    n_app, n_dev, n_cand = sizes or cfg.sizes
    rng = np.random.default_rng(seed)
    if cfg.generator == "gaussian2d":
        app, dev, cand, labels = gaussian2d(n_app, n_dev, n_cand, rng)
    elif cfg.generator == "gaussian-mixture-missing-cluster":
        app, dev, cand, labels = missing_cluster(n_app, n_dev, n_cand, rng, cfg.p_missing)
    else:
        from .io import read_feature_file

        def load(key, **kw):
            p = Path(cfg.files[key])
            return read_feature_file(p if p.is_absolute() or base_dir is None else base_dir / p, **kw)

        with_labels = bool(cfg.files.get("labels", False))
        app, app_labels = load("app", labels=with_labels)
        dev, _ = load("dev", labels=with_labels)
        if "cand" in cfg.files:
            cand, labels = load("cand", labels=with_labels)
        else:
            cand, labels = app, app_labels
        if labels is None:
            labels = np.zeros(len(cand), dtype=np.int64)
    K = min(cfg.K, len(cand))
    return CoveringInstance(app, dev, cand, K, cfg.b_floor), np.asarray(labels)


# -- report ----------------------------------------------------------------------------

@dataclass
class Cell:
    algorithm: str
    seed: int
    status: str = "ok"
    error: str = ""
    trace: SelectionTrace | None = None
    n: int | None = None
    repetition: int = 0
    extras: dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class Report:
    config: ExperimentConfig
    kind: str
    cells: list[Cell] = field(default_factory=list)
    aggregates: dict[str, Any] = field(default_factory=dict)
    environment: dict[str, str] = field(default_factory=dict)

    def cell(self, algorithm: str, seed: int, n: int | None = None) -> Cell:
        for c in self.cells:
            if c.algorithm == algorithm and c.seed == seed and (n is None or c.n == n):
                return c
        raise KeyError((algorithm, seed, n))

    @property
    def any_ok(self) -> bool:
        return any(c.ok for c in self.cells) or (self.kind == "submodularity" and
                                                 self.aggregates.get("trials", 0) > 0)

    def to_dict(self, timings: bool = True) -> dict[str, Any]:
        from .io import trace_to_dict
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "config": self.config.to_dict(),
            "environment": self.environment,
            "aggregates": _jsonable(self.aggregates if timings else _strip_times(self.aggregates)),
            "cells": [
                {
                    "algorithm": c.algorithm, "seed": c.seed, "n": c.n,
                    "repetition": c.repetition, "status": c.status, "error": c.error,
                    "trace": trace_to_dict(c.trace, timings=timings) if c.trace else None,
                    "extras": _jsonable(c.extras),
                }
                for c in self.cells
            ],
        }


def _strip_times(agg: dict) -> dict:
    return {k: v for k, v in agg.items() if "time" not in k}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def environment_metadata() -> dict[str, str]:
    import numba
    import scipy
    return {"pwcover": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__,
            "data": "synthetic analog"}


def _run_cell(inst, algorithm, seed, cfg) -> Cell:
    cell = Cell(algorithm, seed)
    deadline = time.perf_counter() + cfg.timeout_s
    try:
        cell.trace = run_algorithm(inst, algorithm, seed=seed, epsilon=cfg.epsilon,
                                   cap=cfg.cap, deadline=deadline)
    except PWCoverError as exc:
        cell.status = "timeout" if type(exc).__name__ == "DeadlineExceededError" else "failed"
        cell.error = f"{type(exc).__name__}: {exc}"
    return cell


def _curve(trace: SelectionTrace, K: int) -> list[float]:
    """``pw_values`` padded to ``K + 1`` entries; unspent budget keeps the
    last value."""
    pw = list(trace.pw_values)
    return pw + [pw[-1]] * (K + 1 - len(pw))


def _median(xs):
    xs = [x for x in xs if x is not None and not math.isnan(x)]
    return statistics.median(xs) if xs else float("nan")


# -- experiments -----------------------------------------------------------------------

def run_curve_experiment(cfg: ExperimentConfig, base_dir: Path | None = None) -> Report:
    """Divergence after each pick for every (algorithm, seed)."""
    report = Report(cfg, "curve", environment=environment_metadata())
    curves: dict[str, dict[int, list[float]]] = {a: {} for a in cfg.algorithms}
    K = cfg.K
    for seed in cfg.seeds:
        inst, _ = make_instance(cfg, seed, base_dir=base_dir)
        K = inst.K
        for alg in cfg.algorithms:
            cell = _run_cell(inst, alg, seed, cfg)
            if cell.ok:
                cell.extras["curve"] = _curve(cell.trace, inst.K)
                curves[alg][seed] = cell.extras["curve"]
            report.cells.append(cell)
    agg: dict[str, Any] = {"median_curve": {}, "median_phi": {}, "median_time_s": {}}
    for alg in cfg.algorithms:
        cs = list(curves[alg].values())
        if cs:
            agg["median_curve"][alg] = np.median(np.array(cs), axis=0).tolist()
        oks = [c for c in report.cells if c.algorithm == alg and c.ok]
        agg["median_phi"][alg] = _median([c.trace.phi for c in oks])
        agg["median_time_s"][alg] = _median([c.trace.total_time for c in oks])
    proposed = [a for a in cfg.algorithms if a not in ("random", "farthest")]
    baselines = [a for a in cfg.algorithms if a in ("random", "farthest")]
    dom: dict[str, float] = {}
    for p in proposed:
        hits = total = 0
        for seed in cfg.seeds:
            if seed not in curves[p] or any(seed not in curves[b] for b in baselines):
                continue
            total += 1
            mine = np.array(curves[p][seed])
            hits += all(np.all(mine <= np.array(curves[b][seed]) + CURVE_TOL) for b in baselines)
        dom[p] = hits / total if total else float("nan")
    agg["dominance_fraction"] = dom
    agg["K"] = K
    report.aggregates = agg
    return report


def run_timing_experiment(cfg: ExperimentConfig, base_dir: Path | None = None) -> Report:
    """Wall time per algorithm over a size sweep; medians over seeds and
    repetitions."""
    report = Report(cfg, "timing", environment=environment_metadata())
    sweep = cfg.size_sweep or [cfg.sizes[0]]
    times: dict[int, dict[str, list[float]]] = {}
    for n in sweep:
        times[n] = {a: [] for a in cfg.algorithms}
        for seed in cfg.seeds:
            inst, _ = make_instance(cfg, seed, sizes=(n, n, n), base_dir=base_dir)
            for rep in range(cfg.repetitions):
                for alg in cfg.algorithms:
                    t0 = time.perf_counter()
                    cell = _run_cell(inst, alg, seed, cfg)
                    cell.n, cell.repetition = n, rep
                    cell.extras["elapsed_s"] = time.perf_counter() - t0
                    if cell.ok:
                        times[n][alg].append(cell.trace.total_time)
                    report.cells.append(cell)
    med = {n: {a: _median(v) for a, v in row.items()} for n, row in times.items()}
    agg: dict[str, Any] = {"median_time_s": med}
    top = med[max(sweep)]
    order = ["sensitivity-ctrans", "sensitivity-lp", "greedy-lp"]
    if all(a in top for a in order):
        agg["ordering_holds"] = bool(top[order[0]] < top[order[1]] < top[order[2]])
    if "greedy-lp" in cfg.algorithms and "sensitivity-ctrans" in cfg.algorithms:
        agg["greedy_over_ctrans_time"] = {
            n: (row["greedy-lp"] / row["sensitivity-ctrans"]
                if row["sensitivity-ctrans"] > 0 else float("nan")) for n, row in med.items()}
    report.aggregates = agg
    return report


def run_missing_category_experiment(cfg: ExperimentConfig, base_dir: Path | None = None) -> Report:
    """Share of picks that come from the cluster the development set lacks."""
    report = Report(cfg, "missing-category", environment=environment_metadata())
    fracs: dict[str, list[float]] = {a: [] for a in cfg.algorithms}
    base_rates = []
    for seed in cfg.seeds:
        inst, labels = make_instance(cfg, seed, base_dir=base_dir)
        base_rates.append(float(np.mean(labels == MISSING_LABEL)))
        for alg in cfg.algorithms:
            cell = _run_cell(inst, alg, seed, cfg)
            if cell.ok:
                picked = labels[cell.trace.chosen]
                frac = float(np.mean(picked == MISSING_LABEL)) if len(picked) else float("nan")
                cell.extras.update(
                    fraction_missing=frac, n_selected=len(picked),
                    label_counts={int(k): int(np.sum(picked == k)) for k in np.unique(labels)})
                fracs[alg].append(frac)
            report.cells.append(cell)
    report.aggregates = {
        "median_fraction": {a: _median(v) for a, v in fracs.items()},
        "fractions": fracs,
        "base_rate": _median(base_rates),
        "median_time_s": {a: _median([c.trace.total_time for c in report.cells
                                      if c.algorithm == a and c.ok]) for a in cfg.algorithms},
    }
    return report


def _random_subset(rng, n):
    return frozenset(np.flatnonzero(rng.random(n) < 0.5).tolist())


def run_submodularity_fuzz(trials: int = 500, max_sizes: tuple[int, int, int] = (6, 6, 6),
                           seed: int = 0, pairs: int = 10, tol: float = 1e-8,
                           cfg: ExperimentConfig | None = None) -> Report:
    """Check submodularity, monotonicity and diminishing returns of ``phi``.

    Each trial draws sizes uniformly up to ``max_sizes``, evaluates ``phi`` on
    every subset with the exact backend and tests ``pairs`` random ``(S, T)``.
    Violations beyond ``tol`` are kept with the offending instance.
    """
    if trials < 1 or pairs < 1 or min(max_sizes) < 1:
        raise InvalidInputError("trials, pairs and max_sizes must be positive")
    cfg = cfg or ExperimentConfig(name="submodularity", kind="submodularity",
                                  sizes=tuple(max_sizes), seeds=[seed], trials=trials, pairs=pairs)
    rng = np.random.default_rng(seed)
    violations = []
    checks = 0
    for trial in range(trials):
        nx, ny, ns = (int(rng.integers(1, m + 1)) for m in max_sizes)
        X = rng.normal(size=(nx, 2))
        Y = rng.normal(size=(ny, 2)) + rng.normal(size=2)
        Sp = rng.normal(size=(ns, 2)) * 1.5
        inst = CoveringInstance(X, Y, Sp, K=0)
        phi: dict[frozenset, float] = {}

        def val(A):
            if A not in phi:
                phi[A] = objective_phi(inst, sorted(A))
            return phi[A]

        def record(kind, **sets):
            violations.append({"trial": trial, "kind": kind,
                               "sets": {k: sorted(v) for k, v in sets.items()},
                               "app": X.tolist(), "dev": Y.tolist(), "cand": Sp.tolist()})
        for _ in range(pairs):
            S, T = _random_subset(rng, ns), _random_subset(rng, ns)
            checks += 1
            if val(S | T) + val(S & T) > val(S) + val(T) + tol:
                record("submodular", S=S, T=T)
            if val(S & T) > val(S) + tol or val(S) > val(S | T) + tol:
                record("monotone", S=S, T=T)
            outside = sorted(set(range(ns)) - T)
            if outside:
                j = outside[int(rng.integers(len(outside)))]
                A = S & T
                if val(A | {j}) - val(A) < val(T | {j}) - val(T) - tol:
                    record("diminishing", S=A, T=T, j={j})
    report = Report(cfg, "submodularity", environment=environment_metadata())
    report.aggregates = {"trials": trials, "checks": checks, "violations": len(violations),
                         "counterexamples": violations[:20]}
    return report


def run_experiment(cfg: ExperimentConfig, base_dir: Path | None = None) -> Report:
    if cfg.kind == "curve":
        return run_curve_experiment(cfg, base_dir)
    if cfg.kind == "timing":
        return run_timing_experiment(cfg, base_dir)
    if cfg.kind == "missing-category":
        return run_missing_category_experiment(cfg, base_dir)
    return run_submodularity_fuzz(cfg.trials, cfg.sizes, cfg.seeds[0], cfg.pairs, cfg=cfg)


# -- output ----------------------------------------------------------------------------

def write_report(report: Report, out_dir: Path, timings: bool = True) -> list[Path]:
    """Write ``report.json`` plus flat CSV summaries; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "report.json"]
    paths[0].write_text(json.dumps(report.to_dict(timings), indent=2) + "\n", encoding="utf-8")

    def table(name, header, rows):
        p = out_dir / name
        with p.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        paths.append(p)

    ok = [c for c in report.cells if c.ok]
    if report.kind == "curve":
        table("curves.csv", ["algorithm", "seed", "step", "pw_value"],
              [(c.algorithm, c.seed, t, repr(v)) for c in ok
               for t, v in enumerate(c.extras["curve"])])
    if report.kind == "timing":
        table("timing.csv", ["algorithm", "n", "seed", "repetition", "wall_time_s"],
              [(c.algorithm, c.n, c.seed, c.repetition,
                repr(c.trace.total_time) if timings else "") for c in ok])
    if report.kind == "missing-category":
        table("histogram.csv", ["algorithm", "seed", "label", "count", "fraction_missing"],
              [(c.algorithm, c.seed, lab, cnt, repr(c.extras["fraction_missing"]))
               for c in ok for lab, cnt in sorted(c.extras["label_counts"].items())])
    if report.kind == "submodularity":
        table("violations.csv", ["trial", "kind", "sets"],
              [(v["trial"], v["kind"], json.dumps(v["sets"], sort_keys=True))
               for v in report.aggregates["counterexamples"]])
    failed = [c for c in report.cells if not c.ok]
    if failed:
        table("failures.csv", ["algorithm", "seed", "n", "status", "error"],
              [(c.algorithm, c.seed, c.n, c.status, c.error) for c in failed])
    return paths
