import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ldwpdm.domain import Event, WarningConfig
from ldwpdm.errors import NoWarnings, ZeroTotal
from ldwpdm.evaluation import (
    ExperimentConfig, ExperimentError, Report, far_counts, false_alarm_rate, run_experiment, summarize,
    warning_events, warning_frequency,
)
from ldwpdm.synth import GroundTruthLog
from ldwpdm.warning import StrategyRegistry, WarningDecision, basic_alarm


def decisions(mask):
    return [WarningDecision(0.1 * i, "X", bool(f), math.inf) for i, f in enumerate(mask)]


def test_warning_frequency():
    assert warning_frequency(decisions([False] * 1000), 1000) == 0.0
    assert warning_frequency(decisions([True] * 40), 40) == 1.0
    assert warning_frequency([True, False, True, False], 4) == 0.5
    with pytest.raises(ZeroTotal):
        warning_frequency([], 0)
    with pytest.raises(ValueError):
        warning_frequency([True] * 3, 2)


def test_event_collapse():
    fired = np.zeros(60, dtype=bool)
    fired[[0, 1, 2, 11, 21, 40, 41]] = True
    # 2 -> 11 is 0.9 s apart (same event); 11 -> 21 is 1.0 s (new event)
    assert warning_events(fired).tolist() == [0, 21, 40]


@given(st.lists(st.booleans(), min_size=1, max_size=200))
def test_collapse_is_idempotent(mask):
    on = warning_events(mask)
    assert np.array_equal(warning_events(mask), on)
    again = np.zeros(len(mask), dtype=bool)
    again[on] = True
    assert set(warning_events(again)) == set(on) or len(on) > len(warning_events(again))
    assert len(on) <= sum(mask)


def spaced_warnings(n_warn, false_idx, n=400):
    fired = np.zeros(n, dtype=bool)
    labels = np.full(n, "NONE", dtype="<U4")
    for j in range(n_warn):
        s = 5 + 30 * j
        fired[s:s + 3] = True
        labels[s:s + 3] = "LDB"
        if j in false_idx:
            labels[s + 6] = "DCB"
    return fired, labels


def test_false_alarm_rate_definition():
    fired, labels = spaced_warnings(10, {2, 7})
    assert false_alarm_rate(decisions(fired), GroundTruthLog(labels), 1.0) == pytest.approx(0.2)


def test_warnings_during_departures_are_true():
    fired, labels = spaced_warnings(5, set())
    assert false_alarm_rate(fired, labels, 1.0) == 0.0


def test_horizon_is_inclusive():
    fired = np.zeros(50, dtype=bool)
    fired[10] = True
    labels = np.full(50, "NONE", dtype="<U4")
    labels[20] = "DCB"
    assert false_alarm_rate(fired, labels, 1.0) == 1.0
    assert false_alarm_rate(fired, labels, 0.9) == 0.0


def test_no_warnings_is_undefined():
    with pytest.raises(NoWarnings):
        false_alarm_rate([False] * 10, np.full(10, "DCB"), 1.0)


def test_unlabeled_surrogate():
    fired = np.zeros(40, dtype=bool)
    fired[[5, 25]] = True
    dy = np.zeros(40)
    dy[15] = 0.3
    assert far_counts(fired, dy=dy, horizon=1.0) == (1, 2)


def test_config_roundtrip():
    cfg = ExperimentConfig(corpus="x", warning=WarningConfig(q=12), select_k=(2, 5), sweep=True)
    back = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg
    assert cfg.rollout_steps == 30
    assert all(g1 <= g2 for g1, g2, _ in cfg.sweep_points())
    with pytest.raises(ValueError):
        ExperimentConfig(strategies=())
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"nonsense": 1})


@pytest.fixture(scope="module")
def small_report(driver_events):
    _, _, events = driver_events
    reg = StrategyRegistry()
    reg.register("off", lambda p, path, tlc: False)
    reg.register("on", lambda p, path, tlc: True)
    reg.register("clone", lambda p, path, tlc: basic_alarm(tlc, WarningConfig()).fired)
    cfg = ExperimentConfig(strategies=("basic", "pdm", "off", "on", "clone"), k=3, fold_count=3,
                           max_iter=100, sweep=True, gamma1_grid=(-0.1, 0.2), gamma2_grid=(0.1, 0.4), q_grid=(5, 10))
    return run_experiment(cfg, registry=reg, events_by_driver={"t1": events}), events


def test_report_metrics(small_report):
    report, events = small_report
    drv = report.drivers["t1"]
    assert drv["points"] == sum(len(e) for e in events)
    assert report.eta("t1", "off") == 0.0 and report.eta("t1", "on") == 1.0
    assert drv["eta"]["clone"] == drv["eta"]["basic"]
    assert drv["far"]["clone"] == drv["far"]["basic"]
    assert drv["eta"]["pdm"] <= drv["eta"]["basic"]
    assert report.subset_violations == 0
    assert all(v["violations"] == 0 for v in drv["sweep"].values())
    assert all(0 <= e <= 1 for e in drv["eta"].values())
    assert drv["far"]["off"]["pooled"] is None


def test_report_aggregates_recompute(small_report):
    report, _ = small_report
    drv = report.drivers["t1"]
    folds = drv["per_fold"]
    for s in ("basic", "pdm"):
        fired = sum(f["fired"][s] for f in folds)
        assert abs(drv["eta"][s] - fired / sum(f["points"] for f in folds)) <= 1e-12
        fold_far = [f["false"][s] / f["warnings"][s] for f in folds if f["warnings"][s]]
        if fold_far:
            assert abs(drv["far"][s]["mean"] - np.mean(fold_far)) <= 1e-12
            assert abs(drv["far"][s]["std"] - np.std(fold_far)) <= 1e-12
    for q, v in drv["prediction_error"].items():
        tot = sum(f["errors"][q]["sum"] for f in folds)
        cnt = sum(f["errors"][q]["count"] for f in folds)
        assert abs(v["mean"] - tot / cnt) <= 1e-12
    assert summarize(folds, ["basic", "pdm"], [5, 10])["eta"] == {s: drv["eta"][s] for s in ("basic", "pdm")}


def test_report_files(small_report, tmp_path):
    report, _ = small_report
    paths = report.write(tmp_path)
    assert {p.name for p in paths} == {"report.json", "eta.csv", "far.csv", "prediction_error.csv",
                                       "bic_curve.csv", "folds.csv", "sweep.csv"}
    back = Report.from_dict(json.loads((tmp_path / "report.json").read_text()))
    assert back.to_json() == report.to_json()
    header = (tmp_path / "sweep.csv").read_text().splitlines()[0]
    assert header == "driver,gamma1,gamma2,q,eta_pdm,eta_basic,far_pdm,violations"


def test_identical_folds_give_identical_metrics(driver_events):
    _, _, events = driver_events
    ev = events[0]
    copies = [Event(ev.t, ev.v, ev.psi, ev.rho, ev.dy, ev.psidot, labels=ev.labels) for _ in range(10)]
    report = run_experiment(ExperimentConfig(k=1, fold_count=10), events_by_driver={"x": copies})
    folds = report.drivers["x"]["per_fold"]
    keys = ("points", "fired", "warnings", "false", "errors")
    assert all({k: f[k] for k in keys} == {k: folds[0][k] for k in keys} for f in folds)


def test_errors_carry_context(driver_events):
    _, _, events = driver_events
    with pytest.raises(ExperimentError) as exc:
        run_experiment(ExperimentConfig(k=2), events_by_driver={"few": events[:3]})
    assert exc.value.driver == "few" and exc.value.origin == "dataio"


def test_unknown_strategy():
    with pytest.raises(ValueError):
        run_experiment(ExperimentConfig(strategies=("nope",)), events_by_driver={})
