"""Value types for lane-relative driving signals, vehicle geometry and warning settings.

Sign conventions used throughout the package:

* ``dy`` is the lateral distance from the vehicle's centre of gravity to the
  tracked lane boundary. It is positive inside the lane, zero on the line and
  negative once the CoG has crossed it.
* ``psi`` is the relative yaw angle in the kinematic sense: over one step the
  lateral distance changes by ``v * sin(psi) * dt``. A negative ``psi`` therefore
  heads toward the boundary.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

DT = 0.1
SAMPLE_RATE_HZ = 10.0
LANE_WIDTH = 3.7
MAX_CURVATURE = 1e-4

DIM_LABELS = ("v", "psi", "rho", "dy", "psidot")
ZETA_LABELS = DIM_LABELS[:4]

LDB = "LDB"
DCB = "DCB"
NONE = "NONE"
UNLABELED = "UNLABELED"
LABELS = (LDB, DCB, NONE)


@dataclass(frozen=True)
class DrivingPoint:
    """One 10 Hz sample of the five modelled signals."""

    t: float
    v: float
    psi: float
    rho: float
    dy: float
    psidot: float

    @property
    def xi(self) -> np.ndarray:
        return np.array([self.v, self.psi, self.rho, self.dy, self.psidot])

    @property
    def observable(self) -> "ObservablePoint":
        return ObservablePoint(self.v, self.psi, self.rho, self.dy)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DrivingPoint":
        return cls(**{k: float(d[k]) for k in ("t", "v", "psi", "rho", "dy", "psidot")})


@dataclass(frozen=True)
class ObservablePoint:
    """The observable part of a sample: everything except the yaw rate."""

    v: float
    psi: float
    rho: float
    dy: float

    @property
    def zeta(self) -> np.ndarray:
        return np.array([self.v, self.psi, self.rho, self.dy])


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_point(p: DrivingPoint, *, max_curvature: float | None = None) -> ValidationResult:
    """Check a sample against the domain invariants without raising.

    ``max_curvature`` enables the modelling filter ``|rho| <= max_curvature``;
    by default only finiteness and the speed sign are checked.
    """
    problems = []
    values = (p.t, p.v, p.psi, p.rho, p.dy, p.psidot)
    if not all(math.isfinite(x) for x in values):
        problems.append("finite fields")
    if not p.v >= 0:
        problems.append("v >= 0")
    if max_curvature is not None and not abs(p.rho) <= max_curvature:
        problems.append(f"|rho| <= {max_curvature:g}")
    return ValidationResult(tuple(problems))


@dataclass(frozen=True)
class VehicleGeometry:
    width: float = 1.8
    cg_to_front_axle: float = 1.2

    def __post_init__(self):
        if not (math.isfinite(self.width) and self.width > 0):
            raise ValueError(f"vehicle width must be positive, got {self.width}")
        if not (math.isfinite(self.cg_to_front_axle) and self.cg_to_front_axle > 0):
            raise ValueError(f"cg_to_front_axle must be positive, got {self.cg_to_front_axle}")


@dataclass(frozen=True)
class WarningConfig:
    """Thresholds of the warning strategies.

    Attributes:
        tau: TLC threshold in seconds.
        gamma1: crossing-depth threshold on the predicted minimum of ``dy`` (m).
        gamma2: recovery threshold on the terminal predicted ``dy`` (m).
        q: number of prediction steps.
        dt: discretization step in seconds.
    """

    tau: float = 1.0
    gamma1: float = -0.05
    gamma2: float = 0.1
    q: int = 10
    dt: float = DT

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if int(self.q) != self.q or self.q < 1:
            raise ValueError("q must be an integer >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.gamma1 <= self.gamma2:
            raise ValueError("gamma1 must not exceed gamma2")

    @property
    def horizon(self) -> float:
        return self.q * self.dt


_COLUMNS = ("t", "v", "psi", "rho", "dy", "psidot")


@dataclass(frozen=True, eq=False)
class Event:
    """A contiguous trace segment around a near-boundary episode.

    The signals are stored column-wise as read-only float arrays; ``labels`` is
    ``None`` for unlabeled traces and a string array of LDB/DCB/NONE otherwise.
    """

    t: np.ndarray
    v: np.ndarray
    psi: np.ndarray
    rho: np.ndarray
    dy: np.ndarray
    psidot: np.ndarray
    labels: np.ndarray | None = None
    driver_id: str = ""
    source: str = ""
    row_range: tuple[int, int] = (0, 0)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.t)
        for name in _COLUMNS:
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"column {name!r} has shape {arr.shape}, expected ({n},)")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.labels is not None:
            lab = np.array(self.labels, dtype="<U4")
            if lab.shape != (n,):
                raise ValueError("labels must match the number of points")
            lab.flags.writeable = False
            object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "row_range", tuple(int(r) for r in self.row_range))

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self) else 0.0

    @property
    def xi(self) -> np.ndarray:
        """``(n, 5)`` observation matrix ordered as :data:`DIM_LABELS`."""
        return np.column_stack([self.v, self.psi, self.rho, self.dy, self.psidot])

    @property
    def zeta(self) -> np.ndarray:
        return np.column_stack([self.v, self.psi, self.rho, self.dy])

    @property
    def points(self) -> tuple[DrivingPoint, ...]:
        return tuple(self.iter_points())

    def iter_points(self) -> Iterator[DrivingPoint]:
        for row in zip(self.t, self.v, self.psi, self.rho, self.dy, self.psidot):
            yield DrivingPoint(*(float(x) for x in row))

    def point(self, i: int) -> DrivingPoint:
        return DrivingPoint(float(self.t[i]), float(self.v[i]), float(self.psi[i]),
                            float(self.rho[i]), float(self.dy[i]), float(self.psidot[i]))

    def to_dict(self) -> dict:
        return {
            "driver_id": self.driver_id,
            "source": self.source,
            "row_range": list(self.row_range),
            "points": {name: getattr(self, name).tolist() for name in _COLUMNS},
            "labels": None if self.labels is None else self.labels.tolist(),
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Event":
        pts = d["points"]
        return cls(
            *(np.asarray(pts[name], dtype=float) for name in _COLUMNS),
            labels=d.get("labels"),
            driver_id=d.get("driver_id", ""),
            source=d.get("source", ""),
            row_range=tuple(d.get("row_range", (0, 0))),
            meta=dict(d.get("meta") or {}),
        )

    @classmethod
    def from_points(cls, points: Sequence[DrivingPoint], labels=None, **kw) -> "Event":
        cols = {name: np.array([getattr(p, name) for p in points], dtype=float) for name in _COLUMNS}
        return cls(**cols, labels=labels, **kw)
