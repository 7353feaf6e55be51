import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldwpdm.dataio import (
    FoldAssignment, TraceFile, concat_events, cv_split, extract_events, parse_trace, read_events, write_events,
    write_trace,
)
from ldwpdm.errors import NonMonotonicTime, ParseError, TooFewEvents

HEADER = "t,v,psi,rho,dy,psidot\n"


def trace(dy, **kw):
    n = len(dy)
    base = dict(t=np.round(np.arange(n) * 0.1, 10), v=np.full(n, 20.0), psi=np.zeros(n), rho=np.zeros(n),
                dy=np.asarray(dy, float), psidot=np.zeros(n))
    base.update(kw)
    return TraceFile(**base)


def test_minimal_file():
    tf = parse_trace(HEADER + "0,20,0,0,1.5,0\n0.1,20,0.01,0,1.5,0\n0.2,20,0.01,0,1.48,0.001\n")
    assert len(tf.rows) == 3
    assert tf.rows[2].dy == 1.48 and tf.header == ("t", "v", "psi", "rho", "dy", "psidot")


def test_bad_number_reports_line_and_column():
    with pytest.raises(ParseError) as exc:
        parse_trace(HEADER + "0,20,0,0,1.5,0\n0.1,abc,0,0,1.5,0\n")
    assert exc.value.line == 3 and exc.value.column == "v"


@pytest.mark.parametrize("row,col", [("0.1,-2,0,0,1,0", "v"), ("0.1,20,nan,0,1,0", "psi"), ("0.15,20,0,0,1,0", "t")])
def test_invalid_rows(row, col):
    with pytest.raises(ParseError) as exc:
        parse_trace(HEADER + "0,20,0,0,1.5,0\n" + row + "\n")
    assert exc.value.column == col


def test_duplicate_timestamp():
    with pytest.raises(NonMonotonicTime):
        parse_trace(HEADER + "0,20,0,0,1.5,0\n0.1,20,0,0,1.5,0\n0.1,20,0,0,1.5,0\n")


def test_missing_column_and_ragged_row():
    with pytest.raises(ParseError):
        parse_trace("t,v,psi,rho,dy\n0,1,0,0,1\n")
    with pytest.raises(ParseError):
        parse_trace(HEADER + "0,20,0,0\n")


def test_optional_columns_and_gaps():
    text = "t,v,psi,rho,dy,psidot,turn_signal,lane_width,label\n0,20,0,0,1,0,0,3.7,NONE\n0.5,20,0,0,1,0,1,3.6,dcb\n"
    tf = parse_trace(io.StringIO(text))
    assert tf.turn_signal.tolist() == [False, True]
    assert tf.label.tolist() == ["NONE", "DCB"]
    assert tf.grid.tolist() == [0, 5]


def test_write_parse_roundtrip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    tf = trace(rng.normal(1, 0.3, 50), psi=rng.normal(0, 0.01, 50), label=np.array(["NONE"] * 50))
    write_trace(tf, tmp_path / "x.csv")
    back = parse_trace(tmp_path / "x.csv")
    for c in ("t", "v", "psi", "rho", "dy", "psidot"):
        np.testing.assert_array_equal(getattr(back, c), getattr(tf, c))


def test_no_case_points_no_events():
    assert extract_events(trace(np.full(600, 1.5))) == []


def test_isolated_case_point_gives_thirty_second_event():
    dy = np.full(601, 1.5)
    dy[300] = 0.4
    (ev,) = extract_events(trace(dy))
    assert ev.duration == pytest.approx(30.0)
    assert ev.row_range == (150, 451)


def test_overlapping_windows_merge():
    dy = np.full(1201, 1.5)
    dy[[300, 500]] = 0.3
    (ev,) = extract_events(trace(dy))
    assert ev.row_range == (150, 651)


def test_curvature_splits_and_short_fragments_drop():
    dy = np.full(1201, 1.5)
    dy[600] = 0.3
    rho = np.zeros(1201)
    rho[520] = 5e-4
    evs = extract_events(trace(dy, rho=rho))
    # left fragment 450..519 is shorter than 15 s, right fragment 521..750 survives
    assert [e.row_range for e in evs] == [(521, 751)]
    rho[520] = -5e-4
    assert [e.row_range for e in extract_events(trace(dy, rho=rho))] == [(521, 751)]


def test_turn_signal_and_lane_width_rules():
    dy = np.full(601, 1.5)
    dy[300] = 0.3
    ts = np.zeros(601, dtype=bool)
    ts[200] = True
    assert extract_events(trace(dy, turn_signal=ts)) == []
    assert extract_events(trace(dy, lane_width=np.full(601, 3.2))) == []
    assert len(extract_events(trace(dy, lane_width=np.full(601, 3.85)))) == 1


def test_lane_change_is_dropped():
    n = 601
    dy = np.full(n, 1.5)
    dy[250:] = np.linspace(0.4, -3.5, n - 250)
    dy[-60:] = -1.85
    assert extract_events(trace(dy)) == []


def rules_hold(ev, grid_dt=0.1):
    steps = np.rint(np.diff(ev.t) / grid_dt)
    return (np.all(steps == 1) and ev.duration >= 15.0 - 1e-9 and np.all(np.abs(ev.rho) <= 1e-4)
            and np.any(ev.dy <= 0.5))


def test_synthetic_extraction_covers_planted_episodes(driver_events):
    tr, truth, events = driver_events
    assert events and all(rules_hold(e) for e in events)
    covered = np.zeros(len(tr), dtype=bool)
    for e in events:
        covered[e.row_range[0]:e.row_range[1]] = True
    # independent window oracle: every sample within 15 s of a near-boundary sample
    case = np.flatnonzero(tr.dy <= 0.5)
    oracle = np.zeros(len(tr), dtype=bool)
    for i in case:
        oracle[max(i - 150, 0):i + 151] = True
    assert np.array_equal(covered, oracle)
    for ep in truth.episodes:
        if ep.min_dy <= 0.5:
            assert covered[int(round(ep.peak / 0.1))]


def test_extraction_is_idempotent(driver_events):
    _, _, events = driver_events
    again = extract_events(concat_events(events), "t1")
    assert len(again) == len(events)
    for a, b in zip(again, events):
        np.testing.assert_array_equal(a.xi, b.xi)
        np.testing.assert_array_equal(a.t, b.t)
        assert a.labels.tolist() == b.labels.tolist()


def test_events_json_roundtrip(tmp_path, driver_events):
    _, _, events = driver_events
    write_events(events[:2], tmp_path / "e.json")
    back = read_events(tmp_path / "e.json")
    assert [b.row_range for b in back] == [e.row_range for e in events[:2]]
    np.testing.assert_array_equal(back[1].xi, events[1].xi)
    assert json.loads((tmp_path / "e.json").read_text())["events"][0]["driver_id"] == "t1"


def test_ten_events_one_per_fold():
    fa = cv_split(list(range(10)), 10, seed=1)
    assert fa.sizes() == [1] * 10


@given(st.integers(10, 200), st.integers(2, 10), st.integers(0, 1000))
def test_fold_partition(n, k, seed):
    fa = cv_split(list(range(n)), k, seed)
    sizes = fa.sizes()
    assert sum(sizes) == n and max(sizes) - min(sizes) <= 1
    for f in range(k):
        test, train = set(fa.test_indices(f)), set(fa.train_indices(f))
        assert not test & train and test | train == set(range(n))
    assert cv_split(list(range(n)), k, seed) == fa


def test_twenty_three_events():
    sizes = cv_split(list(range(23)), 10, seed=0).sizes()
    assert sorted(sizes) == [2] * 7 + [3] * 3


def test_fold_errors_and_json():
    with pytest.raises(TooFewEvents):
        cv_split(list(range(5)), 10)
    fa = cv_split(list(range(12)), 3, seed=4)
    assert FoldAssignment.from_dict(json.loads(json.dumps(fa.to_dict()))) == fa
