"""Time to lane crossing and the warning strategies built on it."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domain import DrivingPoint, VehicleGeometry, WarningConfig
from .errors import DuplicateName, HorizonMismatch, InvalidGeometry

BASIC_TLC = "BASIC_TLC"
TLC_PDM = "TLC_PDM"
EXTERNAL = "EXTERNAL"


def time_to_line_crossing(dy, approach_angle, v, width: float, cg_to_front_axle: float):
    """TLC = (dy - (D/2 - l_f tan a)) / (v sin a) for an approach angle ``a`` toward the line.

    Works elementwise on arrays. Returns ``inf`` where ``v sin a <= 0`` (parallel or
    moving away) and clamps negative values to 0.
    """
    dy = np.asarray(dy, dtype=float)
    a = np.asarray(approach_angle, dtype=float)
    v = np.asarray(v, dtype=float)
    rate = v * np.sin(a)
    num = dy - (width / 2.0 - cg_to_front_axle * np.tan(a))
    approaching = rate > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        tlc = np.where(approaching, num / np.where(approaching, rate, 1.0), np.inf)
    tlc = np.where(approaching & (tlc < 0), 0.0, tlc)
    return float(tlc) if tlc.ndim == 0 else tlc


def _check_geometry(geom: VehicleGeometry):
    if not (geom.width > 0 and geom.cg_to_front_axle > 0):
        raise InvalidGeometry(f"invalid vehicle geometry {geom}")


def tlc_series(dy, psi, v, geom: VehicleGeometry):
    """TLC for samples in the package's kinematic convention (approach angle is ``-psi``)."""
    _check_geometry(geom)
    return time_to_line_crossing(dy, -np.asarray(psi, dtype=float), v, geom.width, geom.cg_to_front_axle)


def compute_tlc(p: DrivingPoint, geom: VehicleGeometry) -> float:
    """TLC of one sample toward the tracked boundary, in seconds (``inf`` if not approaching)."""
    return float(tlc_series(p.dy, p.psi, p.v, geom))


@dataclass(frozen=True)
class WarningDecision:
    t: float
    strategy: str
    fired: bool
    tlc: float
    conditions: dict = field(default_factory=dict)


def basic_alarm(tlc: float, cfg: WarningConfig, t: float = math.nan) -> WarningDecision:
    fired = bool(tlc < cfg.tau)
    return WarningDecision(t, BASIC_TLC, fired, float(tlc), {"tlc": fired})


def pdm_conditions(tlc, dy_now, dy_hat, cfg: WarningConfig):
    """The three TLC-PDM criteria, elementwise.

    ``dy_hat`` has the horizon on its last axis and at least ``cfg.q`` entries;
    only the first ``cfg.q`` are used. The minimum covers the current ``dy_now``
    and all predicted values.
    """
    dy_hat = np.asarray(dy_hat, dtype=float)
    if dy_hat.shape[-1] < cfg.q:
        raise HorizonMismatch(f"path has {dy_hat.shape[-1]} steps, config needs q={cfg.q}")
    window = dy_hat[..., : cfg.q]
    a = np.asarray(tlc) < cfg.tau
    b = np.minimum(np.asarray(dy_now, dtype=float), window.min(axis=-1)) < cfg.gamma1
    c = window[..., -1] < cfg.gamma2
    return a, b, c


def pdm_fire(tlc, dy_now, dy_hat, cfg: WarningConfig):
    a, b, c = pdm_conditions(tlc, dy_now, dy_hat, cfg)
    return a & b & c


def pdm_alarm(p: DrivingPoint, path, geom: VehicleGeometry, cfg: WarningConfig) -> WarningDecision:
    """TLC-PDM decision for one sample and its predicted path (horizon must equal ``cfg.q``)."""
    dy_hat = np.asarray(getattr(path, "dy_hat", path), dtype=float)
    if dy_hat.shape != (cfg.q,):
        raise HorizonMismatch(f"path horizon {dy_hat.shape[0] if dy_hat.ndim else 0} != q={cfg.q}")
    tlc = compute_tlc(p, geom)
    a, b, c = (bool(x) for x in pdm_conditions(tlc, p.dy, dy_hat, cfg))
    return WarningDecision(p.t, TLC_PDM, a and b and c, tlc, {"tlc": a, "crossing": b, "no_recovery": c})


# -- external strategies ----------------------------------------------------------

DecisionFn = Callable[[DrivingPoint, object, float], bool]


@dataclass(frozen=True)
class StrategyHandle:
    name: str
    fn: DecisionFn

    def __call__(self, p: DrivingPoint, path, tlc: float) -> WarningDecision:
        return WarningDecision(p.t, EXTERNAL, bool(self.fn(p, path, tlc)), float(tlc), {"name": self.name})


class StrategyRegistry:
    """Named third-party strategies evaluated per sample with ``(point, path, tlc)``."""

    def __init__(self):
        self._items: dict[str, StrategyHandle] = {}

    def register(self, name: str, decision_fn: DecisionFn) -> StrategyHandle:
        if name in self._items or name in ("basic", "pdm"):
            raise DuplicateName(f"strategy {name!r} is already registered")
        handle = StrategyHandle(name, decision_fn)
        self._items[name] = handle
        return handle

    def unregister(self, name: str) -> None:
        self._items.pop(name, None)

    def get(self, name: str) -> StrategyHandle:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def names(self) -> list[str]:
        return sorted(self._items)


default_registry = StrategyRegistry()


def register_external_strategy(name: str, decision_fn: DecisionFn,
                               registry: StrategyRegistry | None = None) -> StrategyHandle:
    return (registry or default_registry).register(name, decision_fn)
