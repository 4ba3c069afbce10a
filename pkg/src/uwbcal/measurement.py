"""Synthetic UWB radio: true ranges, pose-dependent bias field and noise/NLOS sampling."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from uwbcal.geometry import (
    AnchorConstellation,
    FeatureVector,
    Mode,
    TagState,
    azimuth_elevation,
    azimuth_elevation_batch,
    tdoa_feature,
    twr_feature,
)


@dataclass(frozen=True)
class BiasFieldParams:
    """Phenomenological antenna-pattern bias.

    ``b = constant_offset + sum_k amplitude_az[k] cos(k alpha + phase[k])
    + amplitude_el sin(beta) + amplitude_el2 sin(beta)^2 + range_gain |dp|``

    The ``sin(beta)^2`` term is the even (doughnut-shaped) part of the
    elevation pattern; the odd ``sin(beta)`` term alone only shifts height
    by a constant between floor and ceiling anchors.
    """

    amplitude_az: tuple = (0.08, 0.04)
    amplitude_el: float = 0.02
    phase: tuple = (0.0, 0.5)
    constant_offset: float = 0.03
    range_gain: float = 0.002
    amplitude_el2: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "amplitude_az", tuple(float(a) for a in self.amplitude_az))
        object.__setattr__(self, "phase", tuple(float(p) for p in self.phase))
        if len(self.amplitude_az) != len(self.phase):
            raise ValueError("need one phase per azimuth harmonic")
        values = (*self.amplitude_az, *self.phase, self.amplitude_el, self.amplitude_el2,
                  self.constant_offset, self.range_gain)
        if not np.all(np.isfinite(values)):
            raise ValueError("bias field parameters must be finite")

    @classmethod
    def zero(cls) -> "BiasFieldParams":
        return cls(amplitude_az=(0.0, 0.0), amplitude_el=0.0, constant_offset=0.0, range_gain=0.0,
                   amplitude_el2=0.0)

    def max_bias(self, max_range: float) -> float:
        """Bound on |b| for a single anchor within ``max_range`` meters."""
        return (
            abs(self.constant_offset)
            + sum(abs(a) for a in self.amplitude_az)
            + abs(self.amplitude_el)
            + abs(self.amplitude_el2)
            + abs(self.range_gain) * max_range
        )


@dataclass(frozen=True)
class NoiseConfig:
    sigma_twr: float = 0.015
    sigma_tdoa: float | None = None
    outlier_rate: float = 0.05
    outlier_scale: float = 1.0
    seed: int = 0
    # Extra NLOS rate below ``ground_height`` (on-ground multipath); off by default.
    ground_outlier_rate: float = 0.0
    ground_height: float = 0.3

    def __post_init__(self):
        if self.sigma_tdoa is None:
            object.__setattr__(self, "sigma_tdoa", 2.0 * self.sigma_twr)
        if self.sigma_twr <= 0 or self.sigma_tdoa <= 0:
            raise ValueError("noise standard deviations must be positive")
        for rate in (self.outlier_rate, self.ground_outlier_rate):
            if not 0.0 <= rate < 0.5:
                raise ValueError("outlier rates must lie in [0, 0.5)")
        if self.outlier_scale <= 0:
            raise ValueError("outlier_scale must be positive")

    def sigma(self, mode) -> float:
        return self.sigma_twr if Mode.parse(mode) is Mode.TWR else self.sigma_tdoa


@dataclass(frozen=True)
class RangeMeasurement:
    mode: Mode
    anchor_i: int
    value: float
    timestamp: float = 0.0
    anchor_j: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if self.mode is Mode.TDOA and self.anchor_j is None:
            raise ValueError("TDoA measurements need a second anchor")
        if not np.isfinite(self.value):
            raise ValueError("measurement value must be finite")


def true_twr_range(p, p_i) -> float:
    d = np.asarray(p, dtype=float) - np.asarray(p_i, dtype=float)
    return float(np.sqrt(d @ d))


def true_tdoa_range(p, p_i, p_j) -> float:
    return true_twr_range(p, p_i) - true_twr_range(p, p_j)


def anchor_bias(delta_p, yaw, params: BiasFieldParams):
    """Single-anchor bias for relative position(s) ``delta_p`` and tag yaw(s)."""
    delta_p = np.asarray(delta_p, dtype=float)
    if delta_p.ndim == 1:
        alpha, beta = azimuth_elevation(delta_p, (0.0, 0.0, yaw))
        rng = np.sqrt(delta_p @ delta_p)
    else:
        alpha, beta = azimuth_elevation_batch(delta_p, yaw)
        rng = np.linalg.norm(delta_p, axis=-1)
    sb = np.sin(beta)
    b = params.constant_offset + params.amplitude_el * sb + params.amplitude_el2 * sb * sb \
        + params.range_gain * rng
    for k, (amp, ph) in enumerate(zip(params.amplitude_az, params.phase), start=1):
        b = b + amp * np.cos(k * alpha + ph)
    return b


def bias_field_eval(feature: FeatureVector, params: BiasFieldParams) -> float:
    """Ground-truth bias for a TWR or TDoA feature vector."""
    v = feature.values
    yaw = v[-1]
    b = float(anchor_bias(v[:3], yaw, params))
    if feature.mode is Mode.TDOA:
        b -= float(anchor_bias(v[3:6], yaw, params))
    return b


def bias_field_batch(mode, features, params: BiasFieldParams) -> np.ndarray:
    """Vectorised :func:`bias_field_eval` over rows of ``features``."""
    X = np.asarray(features, dtype=float)
    yaw = X[:, -1]
    b = anchor_bias(X[:, :3], yaw, params)
    if Mode.parse(mode) is Mode.TDOA:
        b = b - anchor_bias(X[:, 3:6], yaw, params)
    return b


@dataclass
class ErrorDraws:
    """Raw random variates for ``n`` measurements, consumed by :func:`compose_errors`.

    Drawing these up front (and always all four per sample) keeps streams
    aligned regardless of which samples turn out to be outliers.
    """

    normal: np.ndarray
    uniform: np.ndarray
    exponential: np.ndarray
    sign: np.ndarray

    @classmethod
    def draw(cls, n: int, rng: np.random.Generator) -> "ErrorDraws":
        return cls(
            rng.standard_normal(n),
            rng.random(n),
            rng.standard_exponential(n),
            rng.random(n),
        )

    def __len__(self):
        return self.normal.shape[0]


def compose_errors(mode, noise: NoiseConfig, draws: ErrorDraws, idx=slice(None), height=None):
    """Gaussian noise plus NLOS spikes for the selected draws.

    Returns ``(error, is_outlier)``. TWR spikes are positive; TDoA spikes are
    symmetric. ``height`` enables the optional on-ground outlier boost.
    """
    mode = Mode.parse(mode)
    rate = noise.outlier_rate
    if height is not None and noise.ground_outlier_rate > 0.0:
        rate = np.where(np.asarray(height) < noise.ground_height, rate + noise.ground_outlier_rate, rate)
    outlier = draws.uniform[idx] < rate
    spike = noise.outlier_scale * draws.exponential[idx]
    if mode is Mode.TDOA:
        spike = np.where(draws.sign[idx] < 0.5, -spike, spike)
    error = noise.sigma(mode) * draws.normal[idx] + np.where(outlier, spike, 0.0)
    return error, outlier


def make_feature(mode, constellation: AnchorConstellation, tag: TagState, anchor_i, anchor_j=None) -> FeatureVector:
    if Mode.parse(mode) is Mode.TWR:
        return twr_feature(tag, constellation.position(anchor_i))
    return tdoa_feature(tag, constellation.position(anchor_i), constellation.position(anchor_j))


def sample_measurement(
    constellation: AnchorConstellation,
    tag: TagState,
    mode,
    pair,
    bias: BiasFieldParams,
    noise: NoiseConfig,
    rng: np.random.Generator,
    debug: dict | None = None,
) -> RangeMeasurement:
    """Draw one raw measurement ``true + bias + noise (+ spike)``.

    ``pair`` is an anchor id for TWR or an ``(i, j)`` tuple for TDoA. When a
    ``debug`` dict is passed it receives the ground-truth ``outlier`` flag,
    ``true_range`` and ``bias``; the measurement itself carries none of these.
    """
    mode = Mode.parse(mode)
    if mode is Mode.TWR:
        i, j = (pair[0] if isinstance(pair, (tuple, list)) else pair), None
        true = true_twr_range(tag.position, constellation.position(i))
    else:
        i, j = pair
        true = true_tdoa_range(tag.position, constellation.position(i), constellation.position(j))
    feat = make_feature(mode, constellation, tag, i, j)
    b = bias_field_eval(feat, bias)
    draws = ErrorDraws.draw(1, rng)
    err, outlier = compose_errors(mode, noise, draws, height=tag.position[2])
    value = true + b + float(err[0])
    if debug is not None:
        debug.update(outlier=bool(outlier[0]), true_range=true, bias=b)
    return RangeMeasurement(mode, int(i), value, tag.time, None if j is None else int(j))


CSV_HEADER = ("t", "mode", "i", "j", "value")


def write_measurements_csv(path, measurements) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for m in measurements:
            w.writerow([repr(float(m.timestamp)), m.mode.value, m.anchor_i,
                        "" if m.anchor_j is None else m.anchor_j, repr(float(m.value))])


def read_measurements_csv(path) -> list[RangeMeasurement]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"expected header {','.join(CSV_HEADER)}")
        for row in reader:
            j = row["j"]
            out.append(RangeMeasurement(row["mode"], int(row["i"]), float(row["value"]),
                                        float(row["t"]), int(j) if j else None))
    return out
