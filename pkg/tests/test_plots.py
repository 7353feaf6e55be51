from ldwpdm.evaluation import ExperimentConfig, run_experiment
from ldwpdm.plots import render_report


def test_all_figures_render(driver_events, tmp_path):
    _, _, events = driver_events
    cfg = ExperimentConfig(select_k=(1, 3), fold_count=3, max_iter=80, sweep=True,
                           gamma1_grid=(-0.05, 0.2), gamma2_grid=(0.1, 0.4), q_grid=(5, 10))
    report = run_experiment(cfg, events_by_driver={"t1": events})
    paths = render_report(report, tmp_path / "fig")
    assert sorted(p.name for p in paths) == ["bic_curve.png", "eta.png", "far.png",
                                             "prediction_error.png", "sweep.png"]
    for p in paths:
        assert p.read_bytes()[:4] == b"\x89PNG" and p.stat().st_size > 1000
