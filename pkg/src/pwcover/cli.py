"""Command-line interface: ``pwcover select | bench | divergence``.

Exit codes: 0 success, 2 input or config error, 3 infeasible marginals or
enumeration cap, 4 non-convergence (outputs are still written).
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .bench import ExperimentConfig, run_experiment, write_report
from .core import squared_euclidean_cost
from .covering import (ALGORITHMS, CoveringInstance, empirical_approx_ratio, exact_select,
                       run_algorithm)
from .entropic import DEFAULT_EPSILON, SinkhornConfig, sinkhorn_partial_ot
from .errors import InfeasibleError, InvalidInputError, SizeCapError
from .exact import solve_partial_ot
from .io import read_feature_file, write_trace

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_NONCONVERGED = 0, 2, 3, 4

SHORT_ALGORITHMS = {"greedy": "greedy-{}", "sensitivity": "sensitivity-{}"}


def _err(msg: str) -> None:
    print(f"pwcover: error: {msg}", file=sys.stderr)


def _resolve_algorithm(name: str, backend: str) -> str:
    if name in SHORT_ALGORITHMS:
        return SHORT_ALGORITHMS[name].format(backend)
    return name


def shipped_config(name: str) -> Path | None:
    ref = resources.files("pwcover") / "configs" / f"{name}.json"
    return Path(str(ref)) if ref.is_file() else None


def load_config(name_or_path: str) -> tuple[ExperimentConfig, Path]:
    """Load a JSON config from a path or a shipped name such as ``fig2-analog``."""
    path = Path(name_or_path)
    if not path.is_file():
        shipped = shipped_config(name_or_path)
        if shipped is None:
            raise InvalidInputError(f"config {name_or_path!r} is neither a file nor a shipped config")
        path = shipped
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot parse config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(data), path.parent


def cmd_select(args) -> int:
    app, _ = read_feature_file(args.app_file, labels=args.labels)
    dev, _ = read_feature_file(args.dev_file, labels=args.labels)
    cand = read_feature_file(args.cand_file, labels=args.labels)[0] if args.cand_file else None
    algorithm = _resolve_algorithm(args.algorithm, args.backend)
    if algorithm not in ALGORITHMS:
        raise InvalidInputError(f"unknown algorithm {args.algorithm!r}")
    inst = CoveringInstance(app, dev, cand, args.k, args.b_floor)
    trace = run_algorithm(inst, algorithm, seed=args.seed, epsilon=args.epsilon,
                          cfg=SinkhornConfig(max_iter=args.max_iter), cap=args.cap)
    ratio = None
    if args.with_ratio:
        oracle = trace if algorithm == "exact" else exact_select(inst, args.cap)
        ratio = empirical_approx_ratio(trace, oracle)
    config = {"app_file": str(args.app_file), "dev_file": str(args.dev_file),
              "cand_file": str(args.cand_file) if args.cand_file else None,
              "k": args.k, "algorithm": algorithm, "backend": args.backend,
              "epsilon": args.epsilon, "max_iter": args.max_iter, "b_floor": inst.b_floor,
              "seed": args.seed, "labels": args.labels}
    write_trace(args.out, trace, timings=args.timings, config=config, ratio=ratio)
    if not trace.converged:
        _err("entropic solver hit its iteration cap; trace flagged as not converged")
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg, base_dir = load_config(args.config_file)
    report = run_experiment(cfg, base_dir)
    paths = write_report(report, Path(args.out_dir), timings=not args.no_timings)
    for p in paths:
        print(p)
    if not report.any_ok:
        _err("every cell failed")
        return 1
    return EXIT_OK


def cmd_divergence(args) -> int:
    app, _ = read_feature_file(args.app_file, labels=args.labels)
    dev, _ = read_feature_file(args.dev_file, labels=args.labels)
    n_dev = args.dev_size or len(dev)
    if n_dev <= 0:
        raise InvalidInputError("--dev-size must be positive")
    C = squared_euclidean_cost(app, dev)
    a = np.full(len(app), 1.0 / len(app))
    b = np.full(len(dev), 1.0 / n_dev)
    if b.sum() < 1.0 - 1e-12:
        raise InfeasibleError(f"development mass {b.sum():.12g} < 1")
    if args.backend == "lp":
        st = solve_partial_ot(C, (a, b))
        value, f, g, plan, ok = st.objective, st.f, st.g, st.plan, True
    else:
        st = sinkhorn_partial_ot(C, (a, b), args.epsilon, SinkhornConfig(max_iter=args.max_iter))
        value, f, g, plan, ok = st.value, st.f, st.g, st.plan, st.converged
    print(repr(float(value)))
    if args.dump:
        payload = {"schema_version": 1, "backend": args.backend, "value": float(value),
                   "converged": ok, "f": f.tolist(), "g": g.tolist(), "plan": plan.tolist()}
        Path(args.dump).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK if ok else EXIT_NONCONVERGED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pwcover", description=(
        "Select candidate points that best cover an application set, measured by the "
        "partial Wasserstein divergence to an augmented development set."))
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    eps_help = "entropic regularization, relative to the largest cost (default %(default)s)"
    s = sub.add_parser("select", help="run one selection algorithm and write a trace")
    s.add_argument("app_file", type=Path)
    s.add_argument("dev_file", type=Path)
    s.add_argument("cand_file", type=Path, nargs="?",
                   help="candidate points; defaults to the application file")
    s.add_argument("--k", type=int, required=True, help="selection budget")
    s.add_argument("--algorithm", default="sensitivity-lp",
                   help=f"one of {', '.join(ALGORITHMS)}, or 'greedy'/'sensitivity' "
                        "combined with --backend (default %(default)s)")
    s.add_argument("--backend", choices=("lp", "ent"), default="lp")
    s.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help=eps_help)
    s.add_argument("--max-iter", type=int, default=50_000, help="Sinkhorn iteration cap (sweeps plus polish steps)")
    s.add_argument("--b-floor", type=float, default=None,
                   help="capacity of unselected candidates (default 1e-6 / N_dev)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cap", type=int, default=2_000_000, help="subset cap for 'exact'")
    s.add_argument("--with-ratio", action="store_true",
                   help="also run the exact oracle and record the approximation ratio")
    s.add_argument("--labels", action="store_true", help="last column of each file is a label")
    s.add_argument("--timings", action="store_true",
                   help="record per-step wall times (off by default so that traces "
                        "are byte-reproducible)")
    s.add_argument("--out", type=Path, required=True, help="trace file (JSON)")
    s.set_defaults(func=cmd_select)

    b = sub.add_parser("bench", help="run an experiment config")
    b.add_argument("--config-file", required=True,
                   help="JSON config path or a shipped name (fig2-analog, fig4-analog, ...)")
    b.add_argument("--out-dir", required=True)
    b.add_argument("--no-timings", action="store_true")
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("divergence", help="print PW2(app, dev)")
    d.add_argument("app_file", type=Path)
    d.add_argument("dev_file", type=Path)
    d.add_argument("--backend", choices=("lp", "ent"), default="lp")
    d.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help=eps_help)
    d.add_argument("--max-iter", type=int, default=50_000, help="Sinkhorn iteration cap (sweeps plus polish steps)")
    d.add_argument("--dev-size", type=int, default=None,
                   help="N_dev used for the 1/N_dev masses (default: number of rows)")
    d.add_argument("--labels", action="store_true")
    d.add_argument("--dump", type=Path, default=None, help="write plan and duals as JSON")
    d.set_defaults(func=cmd_divergence)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except (InfeasibleError, SizeCapError) as exc:
        _err(str(exc))
        return EXIT_INFEASIBLE
    except InvalidInputError as exc:
        _err(str(exc))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
