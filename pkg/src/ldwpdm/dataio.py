"""Trace CSV ingestion, event extraction and cross-validation folds.

CSV layout: header ``t,v,psi,rho,dy,psidot`` optionally followed by
``turn_signal``, ``lane_width`` and ``label``; one row per 0.1 s sample. Time may
jump forward by whole samples (concatenated segments); such jumps split events.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .domain import DT, LABELS, LANE_WIDTH, MAX_CURVATURE, DrivingPoint, Event
from .errors import NonMonotonicTime, ParseError, TooFewEvents

log = logging.getLogger(__name__)

REQUIRED = ("t", "v", "psi", "rho", "dy", "psidot")
OPTIONAL = ("turn_signal", "lane_width", "label")
SPACING_TOL = 1e-6

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off", ""}


@dataclass(frozen=True, eq=False)
class TraceFile:
    t: np.ndarray
    v: np.ndarray
    psi: np.ndarray
    rho: np.ndarray
    dy: np.ndarray
    psidot: np.ndarray
    turn_signal: np.ndarray | None = None
    lane_width: np.ndarray | None = None
    label: np.ndarray | None = None
    source: str = ""
    dt: float = DT

    def __len__(self) -> int:
        return len(self.t)

    @property
    def header(self) -> tuple[str, ...]:
        return REQUIRED + tuple(c for c in OPTIONAL if getattr(self, c) is not None)

    @property
    def rows(self) -> list[DrivingPoint]:
        return [DrivingPoint(*map(float, r)) for r in zip(self.t, self.v, self.psi, self.rho, self.dy, self.psidot)]

    @property
    def grid(self) -> np.ndarray:
        """Integer sample index of each row on the 10 Hz grid anchored at the first row."""
        if not len(self.t):
            return np.empty(0, dtype=np.int64)
        return np.rint((self.t - self.t[0]) / self.dt).astype(np.int64)

    def to_event(self, driver_id: str = "") -> Event:
        return Event(self.t, self.v, self.psi, self.rho, self.dy, self.psidot, labels=self.label,
                     driver_id=driver_id, source=self.source, row_range=(0, len(self)))


def _open_text(source):
    if isinstance(source, (str, os.PathLike)) and not (isinstance(source, str) and "\n" in source):
        return open(source, newline="", encoding="utf-8"), str(source)
    if isinstance(source, str):
        return io.StringIO(source), "<string>"
    return source, getattr(source, "name", "<stream>")


def parse_trace(source, dt: float = DT) -> TraceFile:
    """Read and validate a trace CSV from a path, an open file or CSV text."""
    fh, name = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(1, None, "empty file", name) from None
        missing = [c for c in REQUIRED if c not in header]
        if missing:
            raise ParseError(1, missing[0], "missing required column", name)
        unknown = [c for c in header if c not in REQUIRED + OPTIONAL]
        if unknown:
            log.warning("%s: ignoring unknown columns %s", name, unknown)
        pos = {c: header.index(c) for c in REQUIRED + OPTIONAL if c in header}
        cols: dict[str, list] = {c: [] for c in pos}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ParseError(lineno, None, f"expected {len(header)} fields, got {len(row)}", name)
            for c in REQUIRED:
                cell = row[pos[c]].strip()
                try:
                    x = float(cell)
                except ValueError:
                    raise ParseError(lineno, c, f"not a number: {cell!r}", name) from None
                if not math.isfinite(x):
                    raise ParseError(lineno, c, "non-finite value", name)
                if c == "v" and x < 0:
                    raise ParseError(lineno, c, "speed must be >= 0", name)
                cols[c].append(x)
            if "turn_signal" in pos:
                cell = row[pos["turn_signal"]].strip().lower()
                if cell not in _TRUE | _FALSE:
                    raise ParseError(lineno, "turn_signal", f"not a flag: {cell!r}", name)
                cols["turn_signal"].append(cell in _TRUE)
            if "lane_width" in pos:
                cell = row[pos["lane_width"]].strip()
                try:
                    w = float(cell)
                except ValueError:
                    raise ParseError(lineno, "lane_width", f"not a number: {cell!r}", name) from None
                if not (math.isfinite(w) and w > 0):
                    raise ParseError(lineno, "lane_width", "lane width must be positive", name)
                cols["lane_width"].append(w)
            if "label" in pos:
                cell = row[pos["label"]].strip().upper()
                if cell not in LABELS:
                    raise ParseError(lineno, "label", f"unknown label {cell!r}", name)
                cols["label"].append(cell)
            _check_time(cols["t"], lineno, dt, name)
    finally:
        if fh is not source:
            fh.close()
    arrays = {c: np.asarray(cols[c], dtype=float) for c in REQUIRED}
    return TraceFile(
        **arrays,
        turn_signal=np.asarray(cols["turn_signal"], dtype=bool) if "turn_signal" in cols else None,
        lane_width=np.asarray(cols["lane_width"], dtype=float) if "lane_width" in cols else None,
        label=np.asarray(cols["label"], dtype="<U4") if "label" in cols else None,
        source=name,
        dt=dt,
    )


def _check_time(ts: list, lineno: int, dt: float, name: str):
    if len(ts) < 2:
        return
    step = ts[-1] - ts[-2]
    if step <= 0:
        raise NonMonotonicTime(lineno, "t", f"time {ts[-1]!r} does not increase after {ts[-2]!r}", name)
    # anchored at the first row so rounding cannot accumulate
    k = (ts[-1] - ts[0]) / dt
    if abs(k - round(k)) * dt > SPACING_TOL:
        raise ParseError(lineno, "t", f"time {ts[-1]!r} is off the {dt:g} s sampling grid", name)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trace(trace: TraceFile, path) -> None:
    cols = trace.header
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        data = [getattr(trace, c) for c in cols]
        for row in zip(*data):
            out = []
            for c, x in zip(cols, row):
                if c == "turn_signal":
                    out.append("1" if x else "0")
                elif c == "label":
                    out.append(str(x))
                else:
                    out.append(_fmt(x))
            w.writerow(out)


def concat_events(events: Sequence[Event], dt: float = DT) -> TraceFile:
    """Stack events back into one (gapped) trace; inverse direction of :func:`extract_events`."""
    if not events:
        raise ValueError("no events to concatenate")
    cat = {c: np.concatenate([getattr(e, c) for e in events]) for c in REQUIRED}
    labels = None
    if all(e.labels is not None for e in events):
        labels = np.concatenate([e.labels for e in events])
    return TraceFile(**cat, label=labels, source=events[0].source, dt=dt)


# -- event extraction ---------------------------------------------------------------

def _runs(mask: np.ndarray, grid: np.ndarray) -> list[tuple[int, int]]:
    """Maximal ``[start, stop)`` row ranges where ``mask`` holds and the grid advances by one."""
    out = []
    idx = np.flatnonzero(mask)
    if not idx.size:
        return out
    breaks = np.flatnonzero((np.diff(idx) != 1) | (np.diff(grid[idx]) != 1)) + 1
    for part in np.split(idx, breaks):
        out.append((int(part[0]), int(part[-1]) + 1))
    return out


def extract_events(
    trace: TraceFile,
    driver_id: str = "",
    *,
    case_threshold: float = 0.5,
    window: float = 15.0,
    max_curvature: float = MAX_CURVATURE,
    lane_width: float = LANE_WIDTH,
    lane_width_tol: float = 0.2,
    lane_change_tol: float = 0.3,
    min_duration: float = 15.0,
) -> list[Event]:
    """Cut a trace into near-boundary events.

    Rules, in order: case points have ``dy <= case_threshold`` (crossings included);
    a +/- ``window`` second span is taken around every case point and touching or
    overlapping spans merge; points with ``|rho| > max_curvature`` or an off-nominal
    lane width are dropped, which may split an event; events with the turn signal
    on or ending near an adjacent lane's centre are discarded; events shorter than
    ``min_duration`` are discarded.
    """
    n = len(trace)
    if n == 0:
        return []
    dt = trace.dt
    grid = trace.grid
    case = np.flatnonzero(trace.dy <= case_threshold)
    if not case.size:
        return []
    half = int(round(window / dt))
    lo, hi = grid[case] - half, grid[case] + half
    spans = []
    for a, b in zip(lo, hi):
        if spans and a <= spans[-1][1] + 1:
            spans[-1][1] = max(spans[-1][1], b)
        else:
            spans.append([a, b])

    keep = np.zeros(n, dtype=bool)
    for a, b in spans:
        keep[np.searchsorted(grid, a, "left"):np.searchsorted(grid, b, "right")] = True

    keep &= np.abs(trace.rho) <= max_curvature
    widths = trace.lane_width if trace.lane_width is not None else np.full(n, lane_width)
    keep &= np.abs(widths - lane_width) <= lane_width_tol

    events = []
    min_steps = int(round(min_duration / dt))
    for s, e in _runs(keep, grid):
        if trace.turn_signal is not None and trace.turn_signal[s:e].any():
            continue
        w_end = widths[e - 1]
        offset = w_end / 2.0 - trace.dy[e - 1]
        if min(abs(offset - w_end), abs(offset + w_end)) <= lane_change_tol:
            continue
        if grid[e - 1] - grid[s] < min_steps:
            continue
        sl = slice(s, e)
        events.append(Event(
            trace.t[sl], trace.v[sl], trace.psi[sl], trace.rho[sl], trace.dy[sl], trace.psidot[sl],
            labels=None if trace.label is None else trace.label[sl],
            driver_id=driver_id, source=trace.source, row_range=(s, e),
        ))
    return events


# -- cross-validation -----------------------------------------------------------------

@dataclass(frozen=True)
class FoldAssignment:
    fold_count: int
    folds: tuple[int, ...]
    seed: int | None

    def test_indices(self, fold: int) -> list[int]:
        return [i for i, f in enumerate(self.folds) if f == fold]

    def train_indices(self, fold: int) -> list[int]:
        return [i for i, f in enumerate(self.folds) if f != fold]

    def sizes(self) -> list[int]:
        return [self.folds.count(k) for k in range(self.fold_count)]

    def to_dict(self) -> dict:
        return {"fold_count": self.fold_count, "folds": list(self.folds), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "FoldAssignment":
        return cls(int(d["fold_count"]), tuple(int(f) for f in d["folds"]), d.get("seed"))


def cv_split(events: Sequence, fold_count: int = 10, seed: int | None = 0) -> FoldAssignment:
    """Seeded shuffle of the events followed by round-robin fold assignment."""
    n = len(events)
    if fold_count < 2:
        raise ValueError("fold_count must be >= 2")
    if n < fold_count:
        raise TooFewEvents(f"{n} events cannot fill {fold_count} folds")
    order = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=int)
    folds[order] = np.arange(n) % fold_count
    return FoldAssignment(fold_count, tuple(int(f) for f in folds), seed)


# -- JSON ---------------------------------------------------------------------------------

def write_events(events: Iterable[Event], path) -> None:
    doc = {"events": [e.to_dict() for e in events]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def read_events(path) -> list[Event]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    items = doc["events"] if isinstance(doc, dict) and "events" in doc else (doc if isinstance(doc, list) else [doc])
    return [Event.from_dict(d) for d in items]
