import math

import numpy as np
import pytest

from rliac import features, harness, learner
from rliac.harness import (ExperimentConfig, Explorer, SimClock, compare, load_config, make_holdout, open_world,
                           overall_error, read_metrics, run_experiment, time_allocation, time_to_threshold,
                           write_metrics)
from rliac.learner import Forest, SampleStore
from rliac.synthworld import CameraPose, render_frame


@pytest.fixture(scope="module")
def lab():
    return open_world("lab")


def quick(**kw):
    base = dict(world="lab", iterations=5, holdout=4, eval_every=2, samples_per_frame=100, episodes=100)
    base.update(kw)
    return ExperimentConfig(**base)


def test_single_iteration(lab):
    rows = run_experiment(quick(iterations=1), lab)
    assert len(rows) == 1
    assert rows[0]["sim_time_s"] > 0
    assert rows[0]["overall_err"] is not None


def test_metrics_byte_identical(tmp_path, lab):
    for name in ("a", "b"):
        run_experiment(quick(strategy="random", seed=3, out=str(tmp_path / name)), lab)
    assert (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()
    other = tmp_path / "c"
    run_experiment(quick(strategy="random", seed=4, out=str(other)), lab)
    assert (other / "metrics.csv").read_bytes() != (tmp_path / "a/metrics.csv").read_bytes()


@pytest.mark.parametrize("strategy", harness.STRATEGIES)
def test_every_strategy_writes_artifacts(tmp_path, lab, strategy):
    ex = run_experiment(quick(strategy=strategy, out=str(tmp_path)), lab, keep=True)
    names = {p.name for p in tmp_path.iterdir()}
    assert {"metrics.csv", "history.csv", "forest.bin", "grid.pgm", "nodes.csv", "edges.csv"} <= names
    assert ("q.csv" in names) == (strategy in ("rl-iac", "schmidhuber"))
    assert ("tour.csv" in names) == (strategy == "uniform")
    back = read_metrics(tmp_path / "metrics.csv")
    assert [r["iteration"] for r in back] == list(range(5))
    assert Forest.load(tmp_path / "forest.bin").n_trained == ex.forest.n_trained


def test_clock_is_additive():
    clock = SimClock(speed=0.5)
    assert clock.advance(0.4, 1.0, 0.1) == pytest.approx(2.4)
    assert clock.advance(0.4, 0.0, 3.0) == pytest.approx(3.4)
    assert clock.now == pytest.approx(5.8)


def test_clock_matches_rows(lab):
    cfg = quick(iterations=6)
    rows = run_experiment(cfg, lab)
    t = 0.0
    for r in rows:
        t += cfg.overhead_s + max(r["displacement_m"] / cfg.speed, r["learner_update_s"])
        assert r["sim_time_s"] == pytest.approx(t, rel=1e-12)


def test_update_cost_grows_with_store(lab):
    rows = run_experiment(quick(iterations=12, samples_per_frame=500), lab)
    cost = [r["learner_update_s"] for r in rows]
    assert cost == sorted(cost)
    assert max(cost) > 5 * min(cost)


def test_untrained_forest_error_is_one(lab):
    hold = make_holdout(lab, 5, np.random.default_rng(0))
    assert all(t.any() for t in hold.truth)
    assert overall_error(Forest(), hold) == 1.0


def test_offline_training_error_is_low(lab):
    r = np.random.default_rng(1)
    hold = make_holdout(lab, 20, r)
    store = SampleStore(features.N_FEATURES)
    for g, t in zip(hold.grids, hold.truth):
        store.add(g.flat(), t.ravel().astype(np.uint8), r)
    forest = Forest()
    for _ in range(13):
        forest.update(store, r)
    assert overall_error(forest, hold) <= 0.1


def test_single_perfect_frame(lab):
    frame = render_frame(lab, CameraPose(1.5, 2.5, 0.0), np.random.default_rng(2))
    cells = harness.gt_cells(frame.gt_mask, frame.camera.feature_factor)
    assert cells.any()

    class Oracle:
        def predict(self, X):
            assert len(X) == cells.size
            return cells.ravel().astype(float)

    assert overall_error(Oracle(), [frame]) == 0.0


def test_compare_single_run_is_its_series(lab, tmp_path):
    cfg = quick(iterations=4)
    result = compare([cfg], lab, n_points=50, out=tmp_path)
    rows = result["runs"][0][1]
    t, e = harness.error_series(rows)
    mean, var, n = result["aggregate"][cfg.strategy]
    assert n == 1 and np.allclose(var, 0)
    assert np.allclose(mean, np.interp(result["axis"], t, e))
    for name in ("long.csv", "aggregate.csv", "time_to_threshold.csv", "failures.csv"):
        assert (tmp_path / name).read_text().count("\n") >= 1


def test_compare_two_seeds(lab):
    result = compare([quick(seed=1), quick(seed=2)], lab, n_points=40)
    mean, var, n = result["aggregate"]["rl-iac"]
    curves = [np.interp(result["axis"], *harness.error_series(rows)) for _, rows in result["runs"]]
    assert n == 2 and np.all(var >= 0)
    assert np.all(mean >= np.minimum(*curves) - 1e-12) and np.all(mean <= np.maximum(*curves) + 1e-12)


def test_compare_records_failures(lab):
    bad = quick(segmentation={"no_such_key": 1})
    result = compare([quick(), bad], lab)
    assert len(result["runs"]) == 1 and len(result["failures"]) == 1


def test_time_to_threshold():
    rows = [{"sim_time_s": t, "overall_err": e} for t, e in ((1.0, 0.9), (2.0, None), (3.0, 0.2), (4.0, 0.1))]
    assert time_to_threshold(rows, 0.2) == 3.0
    assert time_to_threshold(rows, 0.05) == math.inf


def test_allocation_one_area():
    rows = [{"sim_time_s": float(t), "area": "lab", "region": 0} for t in range(100)]
    starts, names, fracs = time_allocation(rows, window_s=10.0)
    assert names == ["lab"] and np.all(fracs == 1.0)


def test_allocation_alternating():
    rows = [{"sim_time_s": float(t), "area": "ab"[t % 2], "region": t % 2} for t in range(1000)]
    _, names, fracs = time_allocation(rows, window_s=200.0)
    assert names == ["a", "b"] and np.allclose(fracs, 0.5, atol=0.01)
    _, names, _ = time_allocation(rows, areas={0: "x", 1: "y"}, window_s=200.0)
    assert names == ["x", "y"]
    with pytest.raises(KeyError):
        time_allocation(rows, areas={0: "x"})


def test_config_file(tmp_path):
    ini = tmp_path / "exp.ini"
    ini.write_text("[run]\nstrategy = random\niterations = 7\n[learner]\nwith_replacement = yes\n"
                   "[segmentation]\ninlier_threshold = 0.03\n")
    cfg = load_config(ini, seed=5)
    assert (cfg.strategy, cfg.iterations, cfg.seed, cfg.with_replacement) == ("random", 7, 5, True)
    assert cfg.segmentation == {"inlier_threshold": 0.03}
    ini.write_text("[run]\nbogus = 1\n")
    with pytest.raises(ValueError):
        load_config(ini)
    with pytest.raises(ValueError):
        ExperimentConfig(strategy="greedy")


def test_metrics_roundtrip(tmp_path, lab):
    rows = run_experiment(quick(iterations=3), lab)
    write_metrics(tmp_path / "m.csv", rows)
    back = read_metrics(tmp_path / "m.csv")
    assert [r["region"] for r in back] == [r["region"] for r in rows]
    assert back[1]["overall_err"] is None
    assert back[0]["frame_err"] == pytest.approx(rows[0]["frame_err"], rel=1e-5)
