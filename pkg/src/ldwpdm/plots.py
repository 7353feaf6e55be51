"""PNG figures of an experiment report, rendered headless with matplotlib's Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 3.6),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "svg.hashsalt": "ldwpdm",
}
_METADATA = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, metadata=_METADATA)
    plt.close(fig)
    return path


def _rows(table):
    header, rows = table
    return [dict(zip(header, r)) for r in rows]


def _bars(ax, drivers, series: dict, ylabel: str):
    width = 0.8 / max(len(series), 1)
    x = np.arange(len(drivers))
    for i, (name, vals) in enumerate(series.items()):
        y = [np.nan if v is None else v for v in vals]
        ax.bar(x + (i - (len(series) - 1) / 2) * width, y, width, label=name)
    ax.set_xticks(x, drivers)
    ax.set_ylabel(ylabel)
    ax.legend()


def render_report(report, out_dir) -> list[Path]:
    """Draw warning frequency, false-alarm rate, error vs. horizon and, when present, BIC and sweep figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = report.tables()
    strategies = list(report.config["strategies"])
    written = []
    with plt.rc_context(STYLE):
        eta = _rows(tables["eta"])
        drivers = [d for d in dict.fromkeys(r["driver"] for r in eta)]
        fig, ax = plt.subplots()
        _bars(ax, drivers, {s: [r["eta"] for r in eta if r["strategy"] == s] for s in strategies},
              "warning frequency")
        written.append(_save(fig, out / "eta.png"))

        far = _rows(tables["far"])
        fig, ax = plt.subplots()
        _bars(ax, drivers, {s: [r["far"] for r in far if r["strategy"] == s] for s in strategies},
              "false-alarm rate")
        written.append(_save(fig, out / "far.png"))

        err = [r for r in _rows(tables["prediction_error"]) if r["driver"] != "ALL"]
        fig, ax = plt.subplots()
        for d in dict.fromkeys(r["driver"] for r in err):
            pts = [(r["q"], r["mae_mean"]) for r in err if r["driver"] == d and r["mae_mean"] is not None]
            if pts:
                q, m = zip(*pts)
                ax.plot(q, m, marker="o", ms=3, lw=1, label=d)
        ax.set_xlabel("prediction steps q")
        ax.set_ylabel("mean abs. error of dy (m)")
        ax.legend(ncol=2)
        written.append(_save(fig, out / "prediction_error.png"))

        bic = _rows(tables["bic_curve"])
        if bic:
            fig, ax = plt.subplots()
            for (d, f) in dict.fromkeys((r["driver"], r["fold"]) for r in bic):
                pts = [(r["k"], r["bic"]) for r in bic if r["driver"] == d and r["fold"] == f]
                k, b = zip(*pts)
                ax.plot(k, b, lw=0.8, alpha=0.6, color="C0")
            ax.set_xlabel("components K")
            ax.set_ylabel("BIC")
            written.append(_save(fig, out / "bic_curve.png"))

        if "sweep" in tables:
            sweep = [r for r in _rows(tables["sweep"]) if r["driver"] == "ALL"]
            q0 = report.config["warning"]["q"]
            g1 = sorted({r["gamma1"] for r in sweep})
            g2 = sorted({r["gamma2"] for r in sweep})
            grid = np.full((len(g2), len(g1)), np.nan)
            for r in sweep:
                if r["q"] == q0 and r["eta_pdm"] is not None:
                    grid[g2.index(r["gamma2"]), g1.index(r["gamma1"])] = r["eta_pdm"]
            fig, ax = plt.subplots()
            im = ax.imshow(grid, origin="lower", aspect="auto", cmap="viridis")
            ax.set_xticks(range(len(g1)), [f"{v:g}" for v in g1])
            ax.set_yticks(range(len(g2)), [f"{v:g}" for v in g2])
            ax.set_xlabel("gamma1 (m)")
            ax.set_ylabel("gamma2 (m)")
            fig.colorbar(im, ax=ax, label=f"warning frequency, q={q0}")
            written.append(_save(fig, out / "sweep.png"))
    return written
