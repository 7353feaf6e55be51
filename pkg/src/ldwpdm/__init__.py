"""Personalized driver model and lane-departure warning toolkit.

A Gaussian mixture over ``(v, psi, rho, dy, psidot)`` with mode transitions
infers a driver's yaw rate from what the car can observe; rolled forward, it
predicts the lateral displacement a few seconds ahead, which gates a classic
time-to-line-crossing warning.
"""

__version__ = "0.1.0"

from .domain import (  # noqa: E402
    DCB, DT, LANE_WIDTH, LDB, DrivingPoint, Event, ObservablePoint, VehicleGeometry, WarningConfig,
)
from .errors import LdwError  # noqa: E402
from .gmm import GmmModel, em_fit, select_components  # noqa: E402
from .hmm import PdmModel, build_pdm, train_pdm  # noqa: E402
from .predictor import PredictedPath, PredictionRequest, predict_path  # noqa: E402
from .warning import compute_tlc, pdm_alarm, basic_alarm, register_external_strategy  # noqa: E402

__all__ = [
    "DCB", "DT", "LANE_WIDTH", "LDB", "DrivingPoint", "Event", "ObservablePoint", "VehicleGeometry",
    "WarningConfig", "LdwError", "GmmModel", "em_fit", "select_components", "PdmModel", "build_pdm",
    "train_pdm", "PredictedPath", "PredictionRequest", "predict_path", "compute_tlc", "pdm_alarm",
    "basic_alarm", "register_external_strategy",
]
