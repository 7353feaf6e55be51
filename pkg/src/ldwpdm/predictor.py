"""Open-loop q-step prediction of the lateral displacement.

The rollout alternates point-mass kinematics with the driver model's yaw-rate
regression. Speed and curvature are held at their current values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .domain import DT, DrivingPoint, Event, ObservablePoint
from .errors import InvalidRequest, LengthMismatch


class DriverModel(Protocol):
    """What the rollout needs from a model; :class:`~ldwpdm.hmm.PdmModel` satisfies it."""

    def filter(self, Z) -> np.ndarray: ...

    def advance(self, beta, Z) -> np.ndarray: ...

    def yaw_rate(self, beta, Z) -> np.ndarray: ...


@dataclass(frozen=True)
class PredictionRequest:
    history: Sequence[ObservablePoint] | np.ndarray
    current: DrivingPoint
    q: int = 10
    dt: float = DT

    def history_array(self) -> np.ndarray:
        h = self.history
        if isinstance(h, np.ndarray):
            return np.atleast_2d(h).astype(float)
        return np.array([p.zeta if isinstance(p, ObservablePoint) else np.asarray(p, dtype=float) for p in h])


@dataclass(frozen=True, eq=False)
class PredictedPath:
    dy_hat: np.ndarray
    psi_hat: np.ndarray
    psidot_hat: np.ndarray

    @property
    def q(self) -> int:
        return len(self.dy_hat)


def rollout(beta, v, psi, rho, dy, psidot, q: int, dt: float, model: DriverModel):
    """Batched rollout from ``n`` start states.

    ``beta`` is ``(n, K)`` (mode weights filtered up to the start); the remaining
    state arguments are length-``n`` arrays. Returns ``(dy_hat, psi_hat, psidot_hat)``,
    each ``(n, q)``; column ``i`` is the state ``(i + 1) * dt`` after the start.
    """
    v = np.asarray(v, dtype=float)
    rho = np.asarray(rho, dtype=float)
    psi = np.array(psi, dtype=float)
    dy = np.array(dy, dtype=float)
    rate = np.array(psidot, dtype=float)
    n = v.shape[0]
    out_dy = np.empty((n, q))
    out_psi = np.empty((n, q))
    out_rate = np.empty((n, q))
    for i in range(q):
        psi_next = psi + rate * dt
        dy_next = dy + v * np.sin(psi) * dt
        Z = np.column_stack([v, psi_next, rho, dy_next])
        beta = model.advance(beta, Z)
        rate = model.yaw_rate(beta, Z)
        psi, dy = psi_next, dy_next
        out_dy[:, i] = dy
        out_psi[:, i] = psi
        out_rate[:, i] = rate
    return out_dy, out_psi, out_rate


def predict_path(req: PredictionRequest, model: DriverModel) -> PredictedPath:
    """Warm the mode weights up on ``req.history`` and roll out ``req.q`` steps from ``req.current``.

    The first step propagates with the measured yaw rate of ``req.current``;
    later steps use the model's inferred yaw rate.
    """
    if int(req.q) != req.q or req.q < 1:
        raise InvalidRequest(f"q must be a positive integer, got {req.q!r}")
    if not req.dt > 0:
        raise InvalidRequest(f"dt must be positive, got {req.dt!r}")
    hist = req.history_array()
    if hist.size == 0:
        raise InvalidRequest("history is empty")
    if hist.ndim != 2 or hist.shape[1] != 4:
        raise InvalidRequest("history rows must be (v, psi, rho, dy)")
    c = req.current
    if not np.all(np.isfinite([c.v, c.psi, c.rho, c.dy, c.psidot])):
        raise InvalidRequest("current point has non-finite fields")
    beta = model.filter(hist)[-1:]
    dy, psi, rate = rollout(beta, [c.v], [c.psi], [c.rho], [c.dy], [c.psidot], int(req.q), req.dt, model)
    return PredictedPath(dy[0], psi[0], rate[0])


def predict_event(event: Event, model: DriverModel, q: int, dt: float = DT):
    """Rollouts from every sample of ``event``, each warmed up on the event's history so far."""
    beta = model.filter(event.zeta)
    return rollout(beta, event.v, event.psi, event.rho, event.dy, event.psidot, q, dt, model)


def prediction_error(predicted, actual) -> float:
    """Mean absolute deviation between a predicted and the measured ``dy`` over the horizon."""
    pred = predicted.dy_hat if isinstance(predicted, PredictedPath) else np.asarray(predicted, dtype=float)
    act = np.asarray(actual, dtype=float)
    if pred.shape != act.shape:
        raise LengthMismatch(f"predicted horizon {pred.shape} does not match actual {act.shape}")
    if pred.size == 0:
        raise LengthMismatch("empty horizon")
    return float(np.mean(np.abs(pred - act)))


def horizon_errors(dy_hat: np.ndarray, dy: np.ndarray, q: int) -> np.ndarray:
    """Per-start mean absolute error over the first ``q`` steps, for starts with a full actual horizon.

    ``dy_hat`` is ``(n, Q)`` from :func:`predict_event` with ``Q >= q``; returns a
    length ``n - Q`` array so every ``q`` is scored on the same start set.
    """
    n, Q = dy_hat.shape
    if q > Q:
        raise LengthMismatch(f"q={q} exceeds the predicted horizon {Q}")
    starts = n - Q
    if starts <= 0:
        return np.empty(0)
    idx = np.arange(starts)[:, None] + np.arange(1, q + 1)[None, :]
    return np.mean(np.abs(dy_hat[:starts, :q] - dy[idx]), axis=1)
