"""Seeded generator of labeled lane-keeping traces with departure and correction episodes.

The vehicle follows the same point-mass kinematics the predictor assumes::

    psi[i+1] = psi[i] + psidot[i] * dt
    dy[i+1]  = dy[i] + v[i] * sin(psi[i]) * dt

A damped proportional controller steers ``dy`` toward the driver's preferred
position. A departure episode switches the controller off and lets the heading
settle on a small approach angle toward the tracked boundary. In a correction
episode (DCB) the driver brakes the approach with a corrective yaw rate timed
to bottom out at a drawn minimum, then steers back; the label lasts until
``dy`` is back above the recovery level. In a departure episode (LDB) the
vehicle keeps drifting past the line; the episode ends at the deepest point and
the later return is unlabeled.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import TraceFile, write_trace
from .domain import DCB, DT, LANE_WIDTH, LDB, NONE
from .errors import InvalidProfile, IoFailure

GAMMA1 = -0.05
GAMMA2 = 0.1
RECOVERY_LEVEL = GAMMA2 + 0.3

_KEEP, _DRIFT, _CORRECT, _RETURN, _RESCUE = range(5)


@dataclass(frozen=True)
class DriverProfile:
    """Driving style of one synthetic driver.

    ``preferred_offset`` is measured from the lane centre toward the tracked
    boundary, so larger values mean the driver hugs that boundary.
    """

    driver_id: str = "d1"
    preferred_offset: float = 0.3
    offset_jitter: float = 0.05
    drift_rate: float = 1 / 40
    correction_prob: float = 0.6
    speed_mean: float = 22.0
    speed_std: float = 2.0
    yaw_noise_std: float = 0.004
    seed: int = 0
    kinematics_noise: float = 0.0
    controller_freq: float = 0.45
    controller_damping: float = 0.8

    def validate(self) -> None:
        if not 0.0 <= self.correction_prob <= 1.0:
            raise InvalidProfile(f"{self.driver_id}: correction_prob must be in [0, 1]")
        for name in ("offset_jitter", "speed_std", "yaw_noise_std", "kinematics_noise", "drift_rate"):
            if not getattr(self, name) >= 0:
                raise InvalidProfile(f"{self.driver_id}: {name} must be >= 0")
        if not self.speed_mean > 0:
            raise InvalidProfile(f"{self.driver_id}: speed_mean must be > 0")
        if not (self.controller_freq > 0 and self.controller_damping > 0):
            raise InvalidProfile(f"{self.driver_id}: controller gains must be > 0")
        if not all(math.isfinite(float(x)) for x in asdict(self).values() if isinstance(x, (int, float))):
            raise InvalidProfile(f"{self.driver_id}: non-finite parameter")

    @classmethod
    def from_dict(cls, d: dict) -> "DriverProfile":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise InvalidProfile(f"unknown profile fields {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class Episode:
    kind: str
    onset: float
    peak: float
    end: float
    recovery: float | None
    min_dy: float
    approach_angle: float


@dataclass(eq=False)
class GroundTruthLog:
    labels: np.ndarray
    episodes: list[Episode] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"labels": self.labels.tolist(), "episodes": [asdict(e) for e in self.episodes]}

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthLog":
        return cls(np.asarray(d["labels"], dtype="<U4"), [Episode(**e) for e in d["episodes"]])


def _ou(rng, n, mean, std, tau, dt, x0=None):
    a = math.exp(-dt / tau)
    s = std * math.sqrt(1 - a * a)
    noise = rng.standard_normal(n)
    out = np.empty(n)
    x = mean if x0 is None else x0
    for i in range(n):
        out[i] = x
        x = mean + a * (x - mean) + s * noise[i]
    return out


def generate_trace(profile: DriverProfile, duration: float, lane_width: float = LANE_WIDTH,
                   dt: float = DT) -> tuple[TraceFile, GroundTruthLog]:
    """Simulate ``duration`` seconds of driving for one profile; fully determined by ``profile.seed``."""
    profile.validate()
    if not duration >= 30:
        raise InvalidProfile("duration must be at least 30 s")
    if not lane_width > 0:
        raise InvalidProfile("lane width must be positive")
    n = int(round(duration / dt)) + 1
    root = np.random.SeedSequence(profile.seed)
    sig_rng, ep_rng = (np.random.default_rng(s) for s in root.spawn(2))

    speed = np.maximum(_ou(sig_rng, n, profile.speed_mean, profile.speed_std, 20.0, dt), 1.0)
    rho = np.clip(_ou(sig_rng, n, 0.0, 3e-5, 30.0, dt), -9e-5, 9e-5)
    offset = _ou(sig_rng, n, profile.preferred_offset, profile.offset_jitter, 15.0, dt)
    yaw_noise = profile.yaw_noise_std * sig_rng.standard_normal(n)
    kin_noise = profile.kinematics_noise * sig_rng.standard_normal(n)
    onset_draw = sig_rng.random(n)
    p_onset = 1.0 - math.exp(-profile.drift_rate * dt)

    w2 = profile.controller_freq ** 2
    zw2 = 2.0 * profile.controller_damping * profile.controller_freq

    psi_arr = np.empty(n)
    dy_arr = np.empty(n)
    rate_arr = np.empty(n)
    labels = np.full(n, NONE, dtype="<U4")
    episodes: list[Episode] = []

    psi, dy = 0.0, lane_width / 2.0
    mode = _KEEP
    cooldown = 10.0
    ep = {}
    for i in range(n):
        v = speed[i]
        psi_arr[i], dy_arr[i] = psi, dy

        if mode == _KEEP:
            cooldown -= dt
            if cooldown <= 0 and dy > 0.8 and onset_draw[i] < p_onset:
                kind = DCB if ep_rng.random() < profile.correction_prob else LDB
                ep = {
                    "kind": kind, "start": i,
                    "angle": ep_rng.uniform(0.012, 0.03),
                    "gain": ep_rng.uniform(0.6, 1.2),
                    "corr": ep_rng.uniform(0.04, 0.09),
                    "target": ep_rng.uniform(-0.04, 0.4) if kind == DCB else ep_rng.uniform(-0.8, -0.1),
                    "min_i": i,
                }
                mode = _DRIFT

        if mode == _DRIFT and ep["kind"] == DCB:
            # correct once the stopping point under the corrective rate reaches the target depth
            stop = dy - (v * psi * psi / (2.0 * ep["corr"]) if psi < 0 else 0.0)
            if stop <= ep["target"]:
                mode = _CORRECT
        elif mode == _DRIFT and dy <= ep["target"]:
            ep["min_i"] = i
            _close(episodes, labels, ep, i, dy_arr, dt, recovered=False)
            mode = _RESCUE

        if mode in (_DRIFT, _CORRECT, _RETURN) and dy < dy_arr[ep["min_i"]]:
            ep["min_i"] = i

        if mode == _DRIFT:
            rate = ep["gain"] * (-ep["angle"] - psi) + 0.5 * yaw_noise[i]
        elif mode in (_CORRECT, _RESCUE):
            rate = ep["corr"] + 0.25 * yaw_noise[i]
            if psi >= 0.008:
                if mode == _CORRECT:
                    mode = _RETURN
                else:
                    mode, cooldown = _KEEP, 8.0
        if mode in (_KEEP, _RETURN):
            err = (lane_width / 2.0 - offset[i]) - dy
            rate = (w2 * err - zw2 * v * math.sin(psi)) / v + yaw_noise[i]
            if mode == _RETURN and dy >= RECOVERY_LEVEL:
                _close(episodes, labels, ep, i, dy_arr, dt, recovered=True)
                mode, cooldown = _KEEP, 8.0
        rate = max(-0.2, min(0.2, rate))
        rate_arr[i] = rate

        dy = dy + v * math.sin(psi) * dt + kin_noise[i]
        psi = psi + rate * dt

    # an episode cut off by the end of the trace stays unlabeled: its outcome is unknown

    t = np.round(np.arange(n) * dt, 10)
    trace = TraceFile(
        t=t, v=speed, psi=psi_arr, rho=rho, dy=dy_arr, psidot=rate_arr,
        turn_signal=np.zeros(n, dtype=bool), lane_width=np.full(n, float(lane_width)),
        label=labels, source=profile.driver_id, dt=dt,
    )
    return trace, GroundTruthLog(labels, episodes)


def _close(episodes, labels, ep, i, dy_arr, dt, recovered):
    s = ep["start"]
    labels[s:i + 1] = ep["kind"]
    episodes.append(Episode(
        kind=ep["kind"],
        onset=round(s * dt, 10),
        peak=round(ep["min_i"] * dt, 10),
        end=round(i * dt, 10),
        recovery=round(i * dt, 10) if recovered else None,
        min_dy=float(dy_arr[ep["min_i"]]),
        approach_angle=float(ep["angle"]),
    ))


def default_profiles(count: int = 10, seed: int = 0) -> list[DriverProfile]:
    """A spread of driving styles: some keep to the lane centre, others hug the boundary."""
    rng = np.random.default_rng(seed)
    out = []
    for j in range(count):
        out.append(DriverProfile(
            driver_id=f"d{j + 1}",
            preferred_offset=float(np.round(rng.uniform(0.0, 0.55), 4)),
            offset_jitter=float(np.round(rng.uniform(0.03, 0.08), 4)),
            drift_rate=float(np.round(rng.uniform(1 / 50, 1 / 30), 5)),
            correction_prob=float(np.round(rng.uniform(0.4, 0.75), 4)),
            speed_mean=float(np.round(rng.uniform(18.0, 28.0), 3)),
            speed_std=float(np.round(rng.uniform(1.0, 3.0), 3)),
            yaw_noise_std=float(np.round(rng.uniform(0.002, 0.006), 5)),
            seed=int(rng.integers(2**31)),
        ))
    return out


def load_profiles(path) -> list[DriverProfile]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    items = doc["profiles"] if isinstance(doc, dict) else doc
    return [DriverProfile.from_dict(d) for d in items]


def generate_corpus(profiles: Sequence[DriverProfile], duration: float, out_dir,
                    lane_width: float = LANE_WIDTH, dt: float = DT) -> Path:
    """Write ``<driver>.csv`` and ``<driver>.truth.json`` per profile plus ``manifest.json``."""
    if not profiles:
        raise InvalidProfile("at least one profile is required")
    ids = [p.driver_id for p in profiles]
    if len(set(ids)) != len(ids):
        raise InvalidProfile("driver ids must be unique")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        entries = []
        for p in profiles:
            trace, truth = generate_trace(p, duration, lane_width, dt)
            write_trace(trace, out / f"{p.driver_id}.csv")
            (out / f"{p.driver_id}.truth.json").write_text(json.dumps(truth.to_dict()) + "\n", encoding="utf-8")
            entries.append({"driver_id": p.driver_id, "trace": f"{p.driver_id}.csv",
                            "truth": f"{p.driver_id}.truth.json", "profile": asdict(p)})
        manifest = {"duration": duration, "lane_width": lane_width, "dt": dt, "drivers": entries}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write corpus to {out}: {exc}") from exc
    return out
