"""Warning metrics and the cross-validated experiment harness.

Warning frequency counts fired samples. The false-alarm rate counts warning
events, where fired samples less than ``min_gap`` seconds apart form one event.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataio import cv_split, extract_events, parse_trace
from .domain import DCB, DT, Event, VehicleGeometry, WarningConfig
from .errors import LdwError, NoWarnings, ZeroTotal
from .gmm import em_fit, select_components
from .hmm import build_pdm
from .predictor import PredictedPath, horizon_errors, predict_event
from .warning import StrategyRegistry, default_registry, pdm_conditions, tlc_series

log = logging.getLogger(__name__)

BASIC = "basic"
PDM = "pdm"
RECOVERY_DY = 0.1

GAMMA1_GRID = (-0.2, -0.1, -0.05, 0.0, 0.2, 0.4, 0.6)
GAMMA2_GRID = (0.0, 0.1, 0.2, 0.4, 0.6)
Q_GRID = (5, 10, 15, 20, 25, 30)
HORIZONS = (5, 10, 15, 20, 25, 30)


class ExperimentError(LdwError):
    """A module error raised while processing one driver or fold."""

    module = "eval"

    def __init__(self, driver: str, fold: int | None, cause: Exception):
        self.driver = driver
        self.fold = fold
        self.cause = cause
        self.origin = getattr(cause, "module", type(cause).__name__)
        where = f"driver {driver!r}" + ("" if fold is None else f", fold {fold}")
        super().__init__(f"{where}: {type(cause).__name__}: {cause}")


# -- metrics --------------------------------------------------------------------------

def _fired(decisions) -> np.ndarray:
    arr = list(decisions)
    if arr and hasattr(arr[0], "fired"):
        return np.array([d.fired for d in arr], dtype=bool)
    return np.asarray(arr, dtype=bool).reshape(-1)


def warning_frequency(decisions, total_points: int) -> float:
    """Share of samples at which a warning fired."""
    fired = int(_fired(decisions).sum())
    if total_points <= 0:
        raise ZeroTotal("warning frequency needs at least one sample")
    if fired > total_points:
        raise ValueError(f"{fired} firings exceed {total_points} samples")
    return fired / total_points


def warning_events(fired, t=None, dt: float = DT, min_gap: float = 1.0) -> np.ndarray:
    """Indices of warning onsets: a fired sample starts an event unless another fired sample precedes it by less than ``min_gap``."""
    fired = np.asarray(fired, dtype=bool)
    idx = np.flatnonzero(fired)
    if not idx.size:
        return idx
    times = idx * dt if t is None else np.asarray(t, dtype=float)[idx]
    new = np.ones(idx.size, dtype=bool)
    new[1:] = np.diff(times) >= min_gap - 1e-9
    return idx[new]


def false_event_flags(onsets, labels=None, dy=None, horizon: float = 1.0, dt: float = DT) -> np.ndarray:
    """Whether each warning onset is false.

    With ``labels`` a warning is false when a DCB label falls within
    ``[onset, onset + horizon]``. Without labels the driver counts as
    correcting when ``dy`` is above the recovery level ``horizon`` later
    (clipped at the end of the data).
    """
    onsets = np.asarray(onsets, dtype=int)
    steps = int(round(horizon / dt))
    if labels is not None:
        dcb = np.asarray(labels) == DCB
        csum = np.concatenate([[0], np.cumsum(dcb)])
        stop = np.minimum(onsets + steps + 1, len(dcb))
        return (csum[stop] - csum[onsets]) > 0
    if dy is None:
        raise ValueError("either labels or dy is required")
    dy = np.asarray(dy, dtype=float)
    return dy[np.minimum(onsets + steps, len(dy) - 1)] > RECOVERY_DY


def far_counts(fired, labels=None, dy=None, horizon: float = 1.0, dt: float = DT,
               t=None, min_gap: float = 1.0) -> tuple[int, int]:
    """``(false_events, warning_events)`` for one contiguous sequence."""
    onsets = warning_events(fired, t, dt, min_gap)
    if not onsets.size:
        return 0, 0
    flags = false_event_flags(onsets, labels, dy, horizon, dt)
    return int(flags.sum()), int(onsets.size)


def false_alarm_rate(decisions, ground_truth, horizon: float = 1.0, dt: float = DT,
                     min_gap: float = 1.0) -> float:
    """False warning events over all warning events.

    ``decisions`` are per-sample decisions (or booleans) aligned index by index
    with ``ground_truth``, which is a :class:`~ldwpdm.synth.GroundTruthLog` or a
    label array.
    """
    fired = _fired(decisions)
    labels = np.asarray(getattr(ground_truth, "labels", ground_truth))
    if labels.shape != fired.shape:
        raise ValueError(f"{fired.size} decisions are not aligned with {labels.size} labels")
    false, total = far_counts(fired, labels=labels, horizon=horizon, dt=dt, min_gap=min_gap)
    if total == 0:
        raise NoWarnings("no warning fired, the false-alarm rate is undefined")
    return false / total


# -- configuration ------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment run; JSON round-trippable."""

    corpus: str = ""
    strategies: tuple[str, ...] = (BASIC, PDM)
    warning: WarningConfig = field(default_factory=WarningConfig)
    k: int = 10
    select_k: tuple[int, int] | None = None
    runs_per_k: int = 1
    fold_count: int = 10
    seed: int = 0
    horizons: tuple[int, ...] = HORIZONS
    far_horizon: float = 1.0
    restarts: int = 1
    epsilon: float = 1e-10
    max_iter: int = 500
    geometry: VehicleGeometry = field(default_factory=VehicleGeometry)
    sweep: bool = False
    gamma1_grid: tuple[float, ...] = GAMMA1_GRID
    gamma2_grid: tuple[float, ...] = GAMMA2_GRID
    q_grid: tuple[int, ...] = Q_GRID
    drivers: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.strategies:
            raise ValueError("at least one strategy is required")
        if not self.horizons:
            raise ValueError("horizons must not be empty")
        if self.sweep and not (self.gamma1_grid and self.gamma2_grid and self.q_grid):
            raise ValueError("sweep grids must not be empty")
        if self.select_k is not None and not 1 <= self.select_k[0] <= self.select_k[1]:
            raise ValueError(f"invalid K range {self.select_k}")
        if self.fold_count < 2:
            raise ValueError("fold_count must be >= 2")

    @property
    def rollout_steps(self) -> int:
        qs = [self.warning.q, *self.horizons] + (list(self.q_grid) if self.sweep else [])
        return max(qs)

    def sweep_points(self) -> list[tuple[float, float, int]]:
        return [(g1, g2, q) for g1 in self.gamma1_grid for g2 in self.gamma2_grid if g1 <= g2
                for q in self.q_grid]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["select_k"] = None if self.select_k is None else list(self.select_k)
        for key in ("strategies", "horizons", "gamma1_grid", "gamma2_grid", "q_grid"):
            d[key] = list(d[key])
        d["drivers"] = None if self.drivers is None else list(self.drivers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        kw = dict(d)
        if isinstance(kw.get("warning"), dict):
            kw["warning"] = WarningConfig(**kw["warning"])
        if isinstance(kw.get("geometry"), dict):
            kw["geometry"] = VehicleGeometry(**kw["geometry"])
        for key in ("strategies", "horizons", "gamma1_grid", "gamma2_grid", "q_grid", "select_k", "drivers"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        return cls(**kw)


# -- corpus ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorpusEntry:
    driver_id: str
    trace: Path


def list_corpus(path) -> list[CorpusEntry]:
    """Drivers of a corpus: from ``manifest.json`` when present, otherwise every ``*.csv`` in the directory."""
    root = Path(path)
    if root.is_file():
        return [CorpusEntry(root.stem, root)]
    if not root.is_dir():
        raise FileNotFoundError(str(root))
    manifest = root / "manifest.json"
    if manifest.exists():
        doc = json.loads(manifest.read_text(encoding="utf-8"))
        return [CorpusEntry(d["driver_id"], root / d["trace"]) for d in doc["drivers"]]
    return [CorpusEntry(p.stem, p) for p in sorted(root.glob("*.csv"))]


# -- per-event scoring ------------------------------------------------------------------

@dataclass
class _Tally:
    points: int = 0
    fired: dict = field(default_factory=dict)
    warnings: dict = field(default_factory=dict)
    false: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    subset_violations: int = 0

    def add(self, name, fired_n, false_n, warn_n):
        self.fired[name] = self.fired.get(name, 0) + int(fired_n)
        self.false[name] = self.false.get(name, 0) + int(false_n)
        self.warnings[name] = self.warnings.get(name, 0) + int(warn_n)


def strategy_masks(event: Event, dy_hat: np.ndarray, cfg: ExperimentConfig,
                   registry: StrategyRegistry | None = None) -> tuple[np.ndarray, dict]:
    """TLC and per-sample firing masks of every configured strategy on one event."""
    tlc = tlc_series(event.dy, event.psi, event.v, cfg.geometry)
    out = {}
    registry = registry or default_registry
    for name in cfg.strategies:
        if name == BASIC:
            out[name] = tlc < cfg.warning.tau
        elif name == PDM:
            a, b, c = pdm_conditions(tlc, event.dy, dy_hat, cfg.warning)
            out[name] = a & b & c
        else:
            handle = registry.get(name)
            q = cfg.warning.q
            out[name] = np.array([
                handle(event.point(i), PredictedPath(dy_hat[i, :q], np.full(q, np.nan), np.full(q, np.nan)),
                       tlc[i]).fired
                for i in range(len(event))
            ], dtype=bool)
    return tlc, out


def _event_far(mask, event, cfg):
    return far_counts(mask, labels=event.labels, dy=event.dy, horizon=cfg.far_horizon,
                      dt=cfg.warning.dt, t=event.t)


def _score_event(event, model, cfg, tally, sweep, registry):
    Q = cfg.rollout_steps
    dy_hat, _, _ = predict_event(event, model, Q, cfg.warning.dt)
    tlc, masks = strategy_masks(event, dy_hat, cfg, registry)
    tally.points += len(event)
    for name, mask in masks.items():
        false, warn = _event_far(mask, event, cfg)
        tally.add(name, mask.sum(), false, warn)
    if BASIC in masks and PDM in masks:
        tally.subset_violations += int(np.sum(masks[PDM] & ~masks[BASIC]))
    for h in cfg.horizons:
        err = horizon_errors(dy_hat, event.dy, h)
        acc = tally.errors.setdefault(str(h), [0.0, 0.0, 0])
        acc[0] += float(err.sum())
        acc[1] += float(np.sum(err * err))
        acc[2] += int(err.size)
    if sweep is not None:
        basic = tlc < cfg.warning.tau
        for key, (g1, g2, q) in zip(sweep, cfg.sweep_points()):
            wc = WarningConfig(cfg.warning.tau, g1, g2, q, cfg.warning.dt)
            a, b, c = pdm_conditions(tlc, event.dy, dy_hat, wc)
            mask = a & b & c
            false, warn = _event_far(mask, event, cfg)
            s = sweep[key]
            s["fired"] += int(mask.sum())
            s["false"] += false
            s["warnings"] += warn
            s["violations"] += int(np.sum(mask & ~basic))


def _sweep_key(g1, g2, q) -> str:
    return f"{g1!r}|{g2!r}|{q}"


# -- driver / experiment ------------------------------------------------------------------

def _fit(train: list[Event], cfg: ExperimentConfig, seed: int):
    pooled = np.concatenate([e.xi for e in train])
    curve = None
    k = cfg.k
    if cfg.select_k is not None:
        lo, hi = cfg.select_k
        k, points = select_components(pooled, range(lo, hi + 1), runs_per_K=cfg.runs_per_k, seed=seed,
                                      epsilon=cfg.epsilon, max_iter=cfg.max_iter)
        curve = [[p.k, p.bic] for p in points]
        gmm = next(p.model for p in points if p.k == k)
    else:
        gmm, _ = em_fit(pooled, k, epsilon=cfg.epsilon, max_iter=cfg.max_iter, seed=seed,
                        restarts=cfg.restarts)
    return build_pdm([e.xi for e in train], gmm), k, curve


def evaluate_driver(driver_id: str, events: Sequence[Event], cfg: ExperimentConfig, seed: int,
                    registry: StrategyRegistry | None = None) -> dict:
    """Cross-validate one driver's personal model and score every held-out fold."""
    folds = cv_split(events, cfg.fold_count, seed)
    fold_seeds = np.random.SeedSequence(seed).spawn(cfg.fold_count)
    per_fold = []
    for f in range(cfg.fold_count):
        try:
            train = [events[i] for i in folds.train_indices(f)]
            test = [events[i] for i in folds.test_indices(f)]
            model, k, curve = _fit(train, cfg, int(fold_seeds[f].generate_state(1)[0]))
            tally = _Tally()
            sweep = ({_sweep_key(*p): {"fired": 0, "false": 0, "warnings": 0, "violations": 0}
                      for p in cfg.sweep_points()} if cfg.sweep else None)
            for e in test:
                _score_event(e, model, cfg, tally, sweep, registry)
        except LdwError as exc:
            if isinstance(exc, ExperimentError):
                raise
            raise ExperimentError(driver_id, f, exc) from exc
        per_fold.append({
            "fold": f, "k": k, "bic_curve": curve, "test_events": len(test),
            "points": tally.points, "fired": tally.fired, "warnings": tally.warnings,
            "false": tally.false,
            "errors": {h: {"sum": s, "sumsq": ss, "count": c} for h, (s, ss, c) in tally.errors.items()},
            "subset_violations": tally.subset_violations,
            "sweep": sweep,
        })
        log.info("driver %s fold %d: %d test points", driver_id, f, tally.points)
    return {"driver_id": driver_id, "n_events": len(events), "folds": folds.to_dict(),
            "per_fold": per_fold, **summarize(per_fold, cfg.strategies, cfg.horizons)}


def _ratio(num, den):
    return None if den == 0 else num / den


def _mean_std(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.asarray(vals, dtype=float)
    return float(arr.mean()), float(arr.std())


def summarize(per_fold: Sequence[dict], strategies: Sequence[str], horizons: Sequence[int]) -> dict:
    """Pooled metrics recomputed from raw per-fold counts."""
    points = sum(f["points"] for f in per_fold)
    eta, far = {}, {}
    for s in strategies:
        fired = sum(f["fired"].get(s, 0) for f in per_fold)
        warn = sum(f["warnings"].get(s, 0) for f in per_fold)
        false = sum(f["false"].get(s, 0) for f in per_fold)
        eta[s] = _ratio(fired, points)
        mean, std = _mean_std([_ratio(f["false"].get(s, 0), f["warnings"].get(s, 0)) for f in per_fold])
        far[s] = {"pooled": _ratio(false, warn), "mean": mean, "std": std, "false": false, "warnings": warn}
    errors = {}
    for h in horizons:
        key = str(h)
        s = sum(f["errors"][key]["sum"] for f in per_fold)
        ss = sum(f["errors"][key]["sumsq"] for f in per_fold)
        c = sum(f["errors"][key]["count"] for f in per_fold)
        mean = _ratio(s, c)
        std = None if c == 0 else math.sqrt(max(ss / c - mean * mean, 0.0))
        errors[key] = {"mean": mean, "std": std, "count": c}
    out = {"points": points, "eta": eta, "far": far, "prediction_error": errors,
           "subset_violations": sum(f["subset_violations"] for f in per_fold)}
    sweeps = [f["sweep"] for f in per_fold if f.get("sweep")]
    if sweeps:
        grid = {}
        for key in sweeps[0]:
            tot = {m: sum(s[key][m] for s in sweeps) for m in ("fired", "false", "warnings", "violations")}
            grid[key] = {"eta": _ratio(tot["fired"], points), "far": _ratio(tot["false"], tot["warnings"]),
                         **tot}
        out["sweep"] = grid
    return out


@dataclass(frozen=True, eq=False)
class Report:
    """Experiment outcome: per-driver metrics, the corpus aggregate and the configuration."""

    config: dict
    drivers: dict
    aggregate: dict

    @property
    def subset_violations(self) -> int:
        return int(self.aggregate["subset_violations"])

    def eta(self, driver: str, strategy: str) -> float | None:
        return self.drivers[driver]["eta"].get(strategy)

    def far(self, driver: str | None, strategy: str) -> float | None:
        src = self.aggregate if driver is None else self.drivers[driver]
        return src["far"][strategy]["pooled"]

    def to_dict(self) -> dict:
        return {"config": self.config, "drivers": self.drivers, "aggregate": self.aggregate}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        return cls(d["config"], d["drivers"], d["aggregate"])

    def tables(self) -> dict[str, tuple[list[str], list[list]]]:
        """Flat tables (header, rows) for the warning, error, BIC and sweep figures."""
        strategies = self.config["strategies"]
        groups = [(d, self.drivers[d]) for d in sorted(self.drivers)] + [("ALL", self.aggregate)]
        eta = [[d, s, r["eta"].get(s)] for d, r in groups for s in strategies]
        far = [[d, s, r["far"][s]["pooled"], r["far"][s]["mean"], r["far"][s]["std"],
                r["far"][s]["false"], r["far"][s]["warnings"]] for d, r in groups for s in strategies]
        err = [[d, int(h), v["mean"], v["std"], v["count"]] for d, r in groups
               for h, v in sorted(r["prediction_error"].items(), key=lambda kv: int(kv[0]))]
        bic = [[d, f["fold"], k, b] for d, r in groups[:-1] for f in r["per_fold"] if f["bic_curve"]
               for k, b in f["bic_curve"]]
        folds = [[d, f["fold"], f["k"], f["test_events"], f["points"]] for d, r in groups[:-1] for f in r["per_fold"]]
        tables = {
            "eta": (["driver", "strategy", "eta"], eta),
            "far": (["driver", "strategy", "far", "far_fold_mean", "far_fold_std", "false_events", "warning_events"], far),
            "prediction_error": (["driver", "q", "mae_mean", "mae_std", "count"], err),
            "bic_curve": (["driver", "fold", "k", "bic"], bic),
            "folds": (["driver", "fold", "k", "test_events", "points"], folds),
        }
        if "sweep" in self.aggregate:
            basic = {d: r["eta"].get(BASIC) for d, r in groups}
            rows = []
            for d, r in groups:
                for key, v in r["sweep"].items():
                    g1, g2, q = key.split("|")
                    rows.append([d, float(g1), float(g2), int(q), v["eta"], basic[d], v["far"], v["violations"]])
            tables["sweep"] = (["driver", "gamma1", "gamma2", "q", "eta_pdm", "eta_basic", "far_pdm", "violations"], rows)
        return tables

    def write(self, out_dir) -> list[Path]:
        """Write ``report.json`` and one CSV per table; returns the written paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = [out / "report.json"]
        written[0].write_text(self.to_json(), encoding="utf-8")
        for name, (header, rows) in self.tables().items():
            path = out / f"{name}.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows([["" if x is None else (repr(x) if isinstance(x, float) else x) for x in row]
                             for row in rows])
            written.append(path)
        return written


def _aggregate(drivers: dict, cfg: ExperimentConfig) -> dict:
    per_fold = [f for d in sorted(drivers) for f in drivers[d]["per_fold"]]
    agg = summarize(per_fold, cfg.strategies, cfg.horizons)
    agg["drivers"] = len(drivers)
    for s in cfg.strategies:
        # spread of the per-driver pooled FAR
        mean, std = _mean_std([drivers[d]["far"][s]["pooled"] for d in drivers])
        agg["far"][s]["driver_mean"], agg["far"][s]["driver_std"] = mean, std
    return agg


def run_experiment(cfg: ExperimentConfig, registry: StrategyRegistry | None = None,
                   events_by_driver: dict[str, list[Event]] | None = None) -> Report:
    """Extract events, cross-validate a personal model per driver and score every strategy.

    ``events_by_driver`` bypasses corpus loading (events already extracted).
    """
    registry = registry or default_registry
    for s in cfg.strategies:
        if s not in (BASIC, PDM) and s not in registry:
            raise ValueError(f"unknown strategy {s!r}")
    if events_by_driver is None:
        events_by_driver = {}
        for entry in list_corpus(cfg.corpus):
            if cfg.drivers is not None and entry.driver_id not in cfg.drivers:
                continue
            try:
                trace = parse_trace(entry.trace, cfg.warning.dt)
            except LdwError as exc:
                raise ExperimentError(entry.driver_id, None, exc) from exc
            events_by_driver[entry.driver_id] = extract_events(trace, entry.driver_id)
    ids = sorted(events_by_driver)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(ids))
    drivers = {}
    for driver_id, ss in zip(ids, seeds):
        try:
            drivers[driver_id] = evaluate_driver(driver_id, events_by_driver[driver_id], cfg,
                                                 int(ss.generate_state(1)[0]), registry)
        except ExperimentError:
            raise
        except LdwError as exc:
            raise ExperimentError(driver_id, None, exc) from exc
    return Report(cfg.to_dict(), drivers, _aggregate(drivers, cfg))
