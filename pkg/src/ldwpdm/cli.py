"""Command-line interface: ``ldwpdm <command> [flags]``.

Exit status is 0 on success, 2 on usage errors and 1 on data errors; data
errors are reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import importlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import extract_events, parse_trace, read_events, write_events
from .domain import DT, DrivingPoint, WarningConfig
from .errors import LdwError
from .evaluation import BASIC, PDM, ExperimentConfig, list_corpus, run_experiment
from .gmm import em_fit, select_components
from .hmm import PdmModel, build_pdm
from .predictor import PredictionRequest, predict_path
from .synth import default_profiles, generate_corpus, load_profiles
from .warning import default_registry

log = logging.getLogger("ldwpdm")

DEFAULTS = {
    "seed": 0, "k": 10, "select_k": None, "q": 10, "dt": DT, "tau": 1.0, "gamma1": -0.05,
    "gamma2": 0.1, "folds": 10, "horizon": 1.0, "strategies": f"{BASIC},{PDM}", "profiles": None,
    "duration": 1800.0, "count": 10, "restarts": None, "max_iter": 500, "epsilon": 1e-10,
    "driver": None, "figures": False, "start": -1, "index": 0,
}


class UsageError(Exception):
    pass


def _k_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.split(".."))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MIN..MAX, got {text!r}") from None
    if not 1 <= lo <= hi:
        raise argparse.ArgumentTypeError(f"invalid range {text!r}")
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="JSON file supplying any flag (flags override it)")
    common.add_argument("--seed", type=int, help="top-level random seed (integer; falls back to $LDW_SEED, then 0)")
    common.add_argument("--dt", type=float, help="sampling step in seconds (default 0.1 s)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--k", type=int, help="mixture components K (count, default 10)")
    model.add_argument("--select-k", type=_k_range, metavar="MIN..MAX",
                       help="choose K by the BIC elbow over this range of component counts")
    model.add_argument("--restarts", type=int, help="EM initializations per fit (count, default 5 for train, 1 per fold otherwise)")
    model.add_argument("--max-iter", type=int, help="EM iteration cap per run (count, default 500)")
    model.add_argument("--epsilon", type=float, help="EM log-likelihood tolerance (nats, default 1e-10)")

    warn = argparse.ArgumentParser(add_help=False)
    warn.add_argument("--q", type=int, help="prediction steps (count of dt steps, default 10)")
    warn.add_argument("--tau", type=float, help="TLC threshold in seconds (default 1.0 s)")
    warn.add_argument("--gamma1", type=float, help="crossing-depth threshold in metres (default -0.05 m)")
    warn.add_argument("--gamma2", type=float, help="recovery threshold in metres (default 0.1 m)")
    warn.add_argument("--folds", type=int, help="cross-validation folds per driver (count, default 10)")
    warn.add_argument("--horizon", type=float, help="false-alarm look-ahead in seconds (default 1.0 s)")
    warn.add_argument("--strategies", metavar="LIST",
                      help="comma-separated strategies: basic, pdm, registered names or module:function")
    warn.add_argument("--driver", action="append", metavar="ID", help="restrict to this driver (repeatable)")
    warn.add_argument("--figures", action="store_true", default=None,
                      help="also render PNG figures next to the CSV tables")

    p = argparse.ArgumentParser(prog="ldwpdm", description="Personalized lane-departure warning toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("generate", parents=[common], help="write a synthetic labeled corpus")
    g.add_argument("--out", required=True, metavar="DIR", help="output directory")
    g.add_argument("--profiles", metavar="FILE", help="JSON list of driver profiles (default: a seeded spread)")
    g.add_argument("--count", type=int, help="number of default profiles (count, default 10)")
    g.add_argument("--duration", type=float, help="trace length per driver in seconds (default 1800 s)")

    e = sub.add_parser("extract", parents=[common], help="cut near-boundary events out of traces")
    e.add_argument("--in", dest="input", required=True, metavar="PATH", help="trace CSV or corpus directory")
    e.add_argument("--driver", metavar="ID", help="driver id (corpus directory input)")
    e.add_argument("--out", required=True, metavar="FILE", help="events JSON")

    t = sub.add_parser("train", parents=[common, model], help="fit a personal driver model")
    t.add_argument("--in", dest="input", required=True, metavar="PATH",
                   help="corpus directory, trace CSV or events JSON")
    t.add_argument("--driver", metavar="ID", help="driver id (corpus directory input)")
    t.add_argument("--out", required=True, metavar="FILE", help="model JSON")

    r = sub.add_parser("predict", parents=[common], help="predict the lateral displacement of one event")
    r.add_argument("--model", required=True, metavar="FILE", help="model JSON from `train`")
    r.add_argument("--event", required=True, metavar="FILE", help="events JSON")
    r.add_argument("--index", type=int, help="which event of the file (default 0)")
    r.add_argument("--start", type=int, help="sample index the prediction starts from (default -1, the last)")
    r.add_argument("--q", type=int, help="prediction steps (count of dt steps, default 10)")
    r.add_argument("--out", metavar="FILE", help="CSV output (default stdout)")

    for name, text in (("evaluate", "cross-validated comparison of the warning strategies"),
                       ("sweep", "warning frequency and false-alarm grids over gamma1, gamma2 and q")):
        c = sub.add_parser(name, parents=[common, model, warn], help=text)
        c.add_argument("--in", dest="input", required=True, metavar="DIR", help="corpus directory")
        c.add_argument("--out", required=True, metavar="DIR", help="report directory")
    return p


def _resolve(args, config: dict) -> dict:
    out = dict(DEFAULTS)
    for key, val in config.items():
        key = key.lstrip("-").replace("-", "_")
        out["input" if key == "in" else key] = val
    if args.seed is None and "seed" not in config and os.environ.get("LDW_SEED"):
        try:
            out["seed"] = int(os.environ["LDW_SEED"])
        except ValueError:
            raise UsageError(f"LDW_SEED must be an integer, got {os.environ['LDW_SEED']!r}") from None
    for key, val in vars(args).items():
        if val is not None:
            out[key] = val
    if isinstance(out.get("select_k"), str):
        out["select_k"] = _k_range(out["select_k"])
    return out


def _require(path, what="file") -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(2, f"{what} not found", str(p))
    return p


def _write_json(path, doc) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _load_events(path: Path, driver: str | None, dt: float):
    if path.is_dir():
        entries = list_corpus(path)
        if driver is None:
            if len(entries) != 1:
                raise UsageError("--driver is required for a corpus with several drivers")
            entry = entries[0]
        else:
            matches = [e for e in entries if e.driver_id == driver]
            if not matches:
                raise UsageError(f"driver {driver!r} is not in {path}")
            entry = matches[0]
        return extract_events(parse_trace(_require(entry.trace), dt), entry.driver_id), entry.driver_id
    if path.suffix == ".json":
        events = read_events(path)
        return events, driver or (events[0].driver_id if events else path.stem)
    driver = driver or path.stem
    return extract_events(parse_trace(path, dt), driver), driver


def _strategies(text: str) -> tuple[str, ...]:
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    for name in names:
        if name in (BASIC, PDM) or name in default_registry:
            continue
        if ":" not in name:
            raise UsageError(f"unknown strategy {name!r}")
        mod, attr = name.split(":", 1)
        default_registry.register(name, getattr(importlib.import_module(mod), attr))
    return names


def cmd_generate(o) -> None:
    if o["profiles"]:
        profiles = load_profiles(_require(o["profiles"]))
    else:
        profiles = default_profiles(int(o["count"]), int(o["seed"]))
    generate_corpus(profiles, float(o["duration"]), o["out"], dt=float(o["dt"]))


def cmd_extract(o) -> None:
    events, _ = _load_events(_require(o["input"]), o["driver"], float(o["dt"]))
    write_events(events, o["out"])
    log.info("%d events", len(events))


def cmd_train(o) -> None:
    events, driver = _load_events(_require(o["input"]), o["driver"], float(o["dt"]))
    if not events:
        raise UsageError("no events to train on")
    seqs = [e.xi for e in events]
    pooled = np.concatenate(seqs)
    restarts = 5 if o["restarts"] is None else int(o["restarts"])
    meta = {"driver_id": driver, "events": len(events), "seed": int(o["seed"])}
    if o["select_k"]:
        lo, hi = o["select_k"]
        k, curve = select_components(pooled, range(lo, hi + 1), runs_per_K=restarts, seed=int(o["seed"]),
                                     epsilon=float(o["epsilon"]), max_iter=int(o["max_iter"]))
        gmm = next(p.model for p in curve if p.k == k)
        meta["bic_curve"] = [[p.k, p.bic] for p in curve]
    else:
        gmm, _ = em_fit(pooled, int(o["k"]), epsilon=float(o["epsilon"]), max_iter=int(o["max_iter"]),
                        seed=int(o["seed"]), restarts=restarts)
    doc = build_pdm(seqs, gmm).to_dict()
    doc["meta"] = meta
    _write_json(o["out"], doc)


def cmd_predict(o) -> None:
    model = PdmModel.from_dict(json.loads(_require(o["model"]).read_text(encoding="utf-8")))
    events = read_events(_require(o["event"]))
    idx = int(o["index"])
    if not -len(events) <= idx < len(events):
        raise UsageError(f"event index {idx} out of range for {len(events)} events")
    ev = events[idx]
    start = int(o["start"])
    if not -len(ev) <= start < len(ev):
        raise UsageError(f"start {start} out of range for an event of {len(ev)} samples")
    start %= len(ev)
    cur: DrivingPoint = ev.point(start)
    dt = float(o["dt"])
    path = predict_path(PredictionRequest(ev.zeta[: start + 1], cur, int(o["q"]), dt), model)
    fh = open(o["out"], "w", newline="", encoding="utf-8") if o.get("out") else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "t", "dy_hat", "psi_hat", "psidot_hat"])
        for i in range(path.q):
            w.writerow([i + 1, repr(round(cur.t + (i + 1) * dt, 10)), repr(float(path.dy_hat[i])),
                        repr(float(path.psi_hat[i])), repr(float(path.psidot_hat[i]))])
    finally:
        if fh is not sys.stdout:
            fh.close()


def experiment_config(o, sweep: bool) -> ExperimentConfig:
    return ExperimentConfig(
        corpus=str(o["input"]),
        strategies=_strategies(o["strategies"]),
        warning=WarningConfig(float(o["tau"]), float(o["gamma1"]), float(o["gamma2"]), int(o["q"]), float(o["dt"])),
        k=int(o["k"]),
        select_k=None if not o["select_k"] else tuple(o["select_k"]),
        fold_count=int(o["folds"]),
        seed=int(o["seed"]),
        far_horizon=float(o["horizon"]),
        restarts=1 if o["restarts"] is None else int(o["restarts"]),
        epsilon=float(o["epsilon"]),
        max_iter=int(o["max_iter"]),
        sweep=sweep,
        drivers=None if not o["driver"] else tuple([o["driver"]] if isinstance(o["driver"], str) else o["driver"]),
    )


def cmd_evaluate(o, sweep: bool = False) -> None:
    _require(o["input"], "corpus")
    cfg = experiment_config(o, sweep)
    report = run_experiment(cfg)
    report.write(o["out"])
    if o["figures"]:
        from .plots import render_report

        render_report(report, o["out"])


def _error_doc(exc: BaseException) -> dict:
    doc = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, LdwError):
        doc["module"] = getattr(exc, "origin", exc.module)
        for key in ("line", "column", "reason", "source", "driver", "fold"):
            if hasattr(exc, key):
                doc[key] = getattr(exc, key)
        cause = getattr(exc, "cause", None)
        if cause is not None:
            doc["cause"] = _error_doc(cause)
    if isinstance(exc, OSError) and exc.filename:
        doc["path"] = str(exc.filename)
        doc["message"] = f"{exc.strerror or exc}: {exc.filename}"
    return doc


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args.command
    try:
        config = {}
        if args.config:
            config = json.loads(_require(args.config).read_text(encoding="utf-8"))
            if not isinstance(config, dict):
                raise UsageError("config file must hold a JSON object")
        ns = {k: v for k, v in vars(args).items() if k not in ("config", "command", "verbose")}
        o = _resolve(argparse.Namespace(**ns), config)
        handlers = {"generate": cmd_generate, "extract": cmd_extract, "train": cmd_train,
                    "predict": cmd_predict, "evaluate": cmd_evaluate,
                    "sweep": lambda opts: cmd_evaluate(opts, sweep=True)}
        handlers[command](o)
    except (UsageError, argparse.ArgumentTypeError) as exc:
        parser.print_usage(sys.stderr)
        print(json.dumps({"error": "UsageError", "message": str(exc)}), file=sys.stderr)
        return 2
    except (LdwError, OSError, ValueError, KeyError) as exc:
        print(json.dumps(_error_doc(exc), sort_keys=True, default=str), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
