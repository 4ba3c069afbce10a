"""Position/velocity EKF with dynamics-feasibility and chi-squared innovation gating."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from uwbcal import kernels
from uwbcal.geometry import AnchorConstellation, GeometryError, Mode, TagState
from uwbcal.measurement import NoiseConfig, RangeMeasurement, make_feature
from uwbcal.nn import MlpModel, compensate

CHI2_1DOF_95 = 3.8415  # 0.95 quantile of chi-squared with one degree of freedom


class Reason(str, enum.Enum):
    ACCEPTED = "accepted"
    REJECTED_DYNAMICS = "rejected_dynamics"
    REJECTED_CHI2 = "rejected_chi2"


@dataclass
class EkfState:
    """Mean ``[p, v]`` and 6x6 covariance at ``time``."""

    mean: np.ndarray
    cov: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(6)
        self.cov = np.asarray(self.cov, dtype=float).reshape(6, 6)

    @property
    def position(self) -> np.ndarray:
        return self.mean[:3]

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[3:]

    @classmethod
    def initial(cls, position, velocity=(0.0, 0.0, 0.0), pos_std=0.1, vel_std=0.1, time=0.0):
        cov = np.diag([pos_std**2] * 3 + [vel_std**2] * 3)
        return cls(np.concatenate([np.asarray(position, float), np.asarray(velocity, float)]), cov, time)

    def is_valid(self, tol=1e-9) -> bool:
        """Symmetric to ``tol`` and eigenvalues >= -tol."""
        P = self.cov
        return bool(np.all(np.isfinite(P)) and np.max(np.abs(P - P.T)) <= tol
                    and np.linalg.eigvalsh(P).min() >= -tol)


@dataclass(frozen=True)
class GateConfig:
    """Outlier-rejection settings and measurement variances R per mode.

    ``dynamics_window`` is the horizon used in the reachable-distance bound;
    see :func:`gate_dynamics`. ``rejection=False`` bypasses both gates.
    """

    a_max: float = 10.0
    chi2_threshold: float = CHI2_1DOF_95
    dynamics_window: float = 0.25
    r_twr: float = 0.015**2
    r_tdoa: float = 0.03**2
    rejection: bool = True

    def __post_init__(self):
        if self.a_max <= 0 or self.chi2_threshold <= 0 or self.dynamics_window <= 0:
            raise ValueError("a_max, chi2_threshold and dynamics_window must be positive")
        if self.r_twr <= 0 or self.r_tdoa <= 0:
            raise ValueError("measurement variances must be positive")

    @classmethod
    def from_noise(cls, noise: NoiseConfig, **kw) -> "GateConfig":
        return cls(r_twr=noise.sigma_twr**2, r_tdoa=noise.sigma_tdoa**2, **kw)

    def measurement_variance(self, mode) -> float:
        return self.r_twr if Mode.parse(mode) is Mode.TWR else self.r_tdoa


@dataclass(frozen=True)
class GateOutcome:
    accepted: bool
    reason: Reason
    innovation: float
    innovation_variance: float
    raw: float = float("nan")
    compensated: float = float("nan")


def predict(state: EkfState, dt: float, process_noise: float) -> EkfState:
    """Constant-velocity propagation; ``process_noise`` is the acceleration PSD (m^2/s^3)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x, P = kernels.ekf_predict(state.mean, state.cov, float(dt), float(process_noise))
    return EkfState(x, P, state.time + dt)


def measurement_model(state: EkfState, mode, anchor_i, anchor_j=None) -> tuple[float, np.ndarray]:
    """Predicted range (TWR) or range difference (TDoA) and its 6-element Jacobian row.

    ``anchor_i``/``anchor_j`` are anchor positions.
    """
    tdoa = Mode.parse(mode) is Mode.TDOA
    p = state.position
    pi = np.asarray(anchor_i, dtype=float)
    pj = np.asarray(anchor_j if tdoa else anchor_i, dtype=float)
    for a in (pi, pj):
        if np.linalg.norm(p - a) <= 0.01:
            raise GeometryError("tag estimate within 1 cm of an anchor")
    pred, h = kernels.range_jacobian(np.ascontiguousarray(p), pi, pj, tdoa)
    return float(pred), h


def reachable_distance(speed: float, dt: float, a_max: float) -> float:
    """Worst-case distance covered in ``dt`` starting at ``speed`` under ``a_max``."""
    return speed * dt + 0.5 * a_max * dt * dt


def gate_dynamics(innovation: float, state: EkfState, dt: float, config: GateConfig, mode) -> bool:
    """Accept iff |innovation| fits within the reachable distance (doubled for TDoA)."""
    d_max = reachable_distance(float(np.linalg.norm(state.velocity)), dt, config.a_max)
    limit = d_max if Mode.parse(mode) is Mode.TWR else 2.0 * d_max
    return abs(innovation) <= limit


def innovation_stats(state: EkfState, value: float, mode, anchor_i, anchor_j, config: GateConfig):
    """Innovation ``y = value - g(x)`` and its variance ``S = G P G^T + R``."""
    pred, h = measurement_model(state, mode, anchor_i, anchor_j)
    s = float(h @ state.cov @ h) + config.measurement_variance(mode)
    return float(value) - pred, s


def gate_chi2(y_tilde: float, S: float, config: GateConfig) -> bool:
    if not S > 0:
        raise ValueError("innovation variance must be positive")
    return y_tilde * y_tilde / S <= config.chi2_threshold


def update(
    state: EkfState,
    measurement: RangeMeasurement,
    constellation: AnchorConstellation,
    config: GateConfig,
    model: MlpModel | None = None,
    attitude=(0.0, 0.0, 0.0),
) -> tuple[EkfState, GateOutcome]:
    """Compensate, gate and fuse one scalar measurement.

    The bias feature is built from the current position estimate and the
    supplied attitude. A rejected measurement returns ``state`` untouched.
    """
    mode = measurement.mode
    pi = constellation.position(measurement.anchor_i)
    pj = constellation.position(measurement.anchor_j) if mode is Mode.TDOA else None
    value = measurement.value
    if model is not None:
        tag = TagState(state.position, state.velocity, attitude, state.time)
        feat = make_feature(mode, constellation, tag, measurement.anchor_i, measurement.anchor_j)
        value = compensate(measurement, model, feat)

    pred, h = measurement_model(state, mode, pi, pj)
    r = config.measurement_variance(mode)
    y = value - pred
    S = float(h @ state.cov @ h) + r

    def outcome(reason):
        return GateOutcome(reason is Reason.ACCEPTED, reason, y, S, measurement.value, value)

    if config.rejection:
        if not gate_dynamics(y, state, config.dynamics_window, config, mode):
            return state, outcome(Reason.REJECTED_DYNAMICS)
        if not gate_chi2(y, S, config):
            return state, outcome(Reason.REJECTED_CHI2)
    x, P = kernels.ekf_update(state.mean, state.cov, h, y, r)
    return EkfState(x, P, state.time), outcome(Reason.ACCEPTED)
