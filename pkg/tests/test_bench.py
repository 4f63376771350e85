import csv
import json

import numpy as np
import pytest

from pwcover.bench import (MISSING_LABEL, ExperimentConfig, gaussian2d, missing_cluster,
                           run_curve_experiment, run_missing_category_experiment,
                           run_submodularity_fuzz, run_timing_experiment, write_report)
from pwcover.covering import pw_divergence
from pwcover.errors import InvalidInputError


def test_config_validation():
    with pytest.raises(InvalidInputError):
        ExperimentConfig(algorithms=[])
    with pytest.raises(InvalidInputError):
        ExperimentConfig(seeds=[])
    with pytest.raises(InvalidInputError):
        ExperimentConfig(sizes=(0, 3, 3))
    with pytest.raises(InvalidInputError):
        ExperimentConfig(algorithms=["lof"])
    with pytest.raises(InvalidInputError):
        ExperimentConfig.from_dict({"nonsense": 1})
    cfg = ExperimentConfig.from_dict({"sizes": [5, 4, 3], "K": 2})
    assert cfg.sizes == (5, 4, 3)
    assert ExperimentConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_gaussian_generator():
    app, dev, cand, labels = gaussian2d(200, 300, 200, np.random.default_rng(0))
    assert app.shape == (200, 2) and dev.shape == (300, 2) and cand is app
    assert np.allclose(dev.mean(axis=0), [1.0, 0.0], atol=0.15)
    assert np.allclose(dev.var(axis=0), 0.5, atol=0.15)
    _, _, cand2, _ = gaussian2d(10, 10, 7, np.random.default_rng(0))
    assert cand2.shape == (7, 2)


def test_missing_cluster_generator():
    rng = np.random.default_rng(1)
    app, dev, cand, labels = missing_cluster(300, 2000, 300, rng)
    assert cand is app
    assert np.bincount(labels).tolist() == [100, 100, 100]
    # Development points near cluster 2 are rare.
    d2 = ((dev - [2.0, 2.0 * np.sqrt(3.0)]) ** 2).sum(axis=1)
    assert np.mean(d2 < 1.0) < 0.02


def test_generators_are_deterministic():
    a = missing_cluster(30, 30, 30, np.random.default_rng(5))
    b = missing_cluster(30, 30, 30, np.random.default_rng(5))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def small_curve_cfg(**kw):
    base = dict(kind="curve", sizes=(12, 12, 12), K=6, seeds=[0, 1, 2],
                algorithms=["greedy-lp", "sensitivity-lp", "sensitivity-ctrans", "random",
                            "farthest"])
    base.update(kw)
    return ExperimentConfig(**base)


def test_curve_experiment(tmp_path):
    cfg = small_curve_cfg()
    rep = run_curve_experiment(cfg)
    assert len(rep.cells) == 15 and all(c.ok for c in rep.cells)
    for seed in cfg.seeds:
        starts = {rep.cell(a, seed).extras["curve"][0] for a in cfg.algorithms}
        assert len(starts) == 1
        from pwcover.bench import make_instance
        inst, _ = make_instance(cfg, seed)
        assert starts.pop() == pytest.approx(pw_divergence(inst), abs=1e-12)
        for a in cfg.algorithms:
            assert len(rep.cell(a, seed).extras["curve"]) == cfg.K + 1
    assert set(rep.aggregates["dominance_fraction"]) == {"greedy-lp", "sensitivity-lp",
                                                          "sensitivity-ctrans"}
    paths = write_report(rep, tmp_path)
    rows = list(csv.reader(open(tmp_path / "curves.csv")))
    assert rows[0] == ["algorithm", "seed", "step", "pw_value"]
    assert len(rows) - 1 == 5 * 3 * (cfg.K + 1)
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["schema_version"] == 1 and len(data["cells"]) == 15
    assert tmp_path / "report.json" in paths


def test_sensitivity_curve_equals_greedy_when_certified():
    cfg = small_curve_cfg(algorithms=["greedy-lp", "sensitivity-lp"], seeds=list(range(6)))
    rep = run_curve_experiment(cfg)
    from pwcover.bench import make_instance
    matched = 0
    for seed in cfg.seeds:
        inst, _ = make_instance(cfg, seed)
        tr = rep.cell("sensitivity-lp", seed).trace
        floor_mass = inst.n_cand * inst.b_floor
        if all(s["upper"] >= 1 / inst.n_dev - floor_mass for s in tr.steps):
            assert np.allclose(rep.cell("sensitivity-lp", seed).extras["curve"],
                               rep.cell("greedy-lp", seed).extras["curve"], atol=1e-12)
            matched += 1
    assert matched > 0


def test_timing_experiment_smoke(tmp_path):
    cfg = ExperimentConfig(kind="timing", size_sweep=[20, 50], K=5, repetitions=1,
                           algorithms=["sensitivity-ctrans", "sensitivity-lp", "greedy-lp"])
    rep = run_timing_experiment(cfg)
    assert all(c.ok for c in rep.cells) and len(rep.cells) == 6
    med = rep.aggregates["median_time_s"]
    assert set(med) == {20, 50} and all(v > 0 for v in med[50].values())
    assert "ordering_holds" in rep.aggregates
    write_report(rep, tmp_path)
    rows = list(csv.reader(open(tmp_path / "timing.csv")))
    assert rows[0] == ["algorithm", "n", "seed", "repetition", "wall_time_s"] and len(rows) == 7


def test_timeout_is_recorded(tmp_path):
    cfg = small_curve_cfg(timeout_s=1e-9, algorithms=["greedy-lp"], seeds=[0])
    rep = run_curve_experiment(cfg)
    assert rep.cells[0].status == "timeout"
    write_report(rep, tmp_path)
    assert "timeout" in (tmp_path / "failures.csv").read_text()


def test_missing_category_experiment(tmp_path):
    cfg = ExperimentConfig(kind="missing-category", generator="gaussian-mixture-missing-cluster",
                           sizes=(60, 60, 60), K=8, seeds=[0, 1],
                           algorithms=["greedy-lp", "random"])
    rep = run_missing_category_experiment(cfg)
    assert rep.aggregates["base_rate"] == pytest.approx(1 / 3)
    assert rep.aggregates["median_fraction"]["greedy-lp"] > rep.aggregates["median_fraction"]["random"]
    write_report(rep, tmp_path)
    rows = list(csv.DictReader(open(tmp_path / "histogram.csv")))
    assert {r["label"] for r in rows} == {"0", "1", "2"}
    for c in rep.cells:
        assert sum(c.extras["label_counts"].values()) == c.extras["n_selected"]
        assert c.extras["fraction_missing"] == pytest.approx(
            c.extras["label_counts"][MISSING_LABEL] / c.extras["n_selected"])


def test_submodularity_fuzz_clean():
    rep = run_submodularity_fuzz(trials=40, max_sizes=(6, 6, 6), seed=3)
    assert rep.aggregates["violations"] == 0 and rep.aggregates["checks"] == 400


def test_submodularity_fuzz_reports_counterexamples(tmp_path):
    # A negative tolerance turns every equality case (e.g. S == T) into a
    # reported violation, which exercises the serialization path.
    rep = run_submodularity_fuzz(trials=5, max_sizes=(3, 3, 2), seed=0, tol=-1.0)
    assert rep.aggregates["violations"] > 0
    ex = rep.aggregates["counterexamples"][0]
    assert {"trial", "kind", "sets", "app", "dev", "cand"} <= set(ex)
    write_report(rep, tmp_path)
    assert len(list(csv.reader(open(tmp_path / "violations.csv")))) > 1
    json.loads((tmp_path / "report.json").read_text())


def test_from_file_generator(tmp_path):
    from pwcover.bench import make_instance
    from pwcover.io import write_feature_file
    write_feature_file(tmp_path / "app.csv", [[0.0, 0.0], [1.0, 1.0]])
    write_feature_file(tmp_path / "dev.csv", [[0.5, 0.5]])
    cfg = ExperimentConfig(generator="from-file", files={"app": "app.csv", "dev": "dev.csv"},
                           K=5, algorithms=["greedy-lp"])
    inst, labels = make_instance(cfg, 0, base_dir=tmp_path)
    assert inst.n_app == 2 and inst.n_cand == 2 and inst.K == 2
    assert labels.tolist() == [0, 0]
    with pytest.raises(InvalidInputError):
        ExperimentConfig(generator="from-file", files={"app": "x"})
