"""Tag/anchor relative geometry and NN feature construction."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MIN_ANCHOR_SEPARATION = 0.01  # m


class GeometryError(ValueError):
    """Raised for degenerate tag/anchor configurations."""


class Mode(str, enum.Enum):
    TWR = "twr"
    TDOA = "tdoa"

    @property
    def feature_length(self) -> int:
        return 6 if self is Mode.TWR else 9

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown ranging mode {value!r}; expected 'twr' or 'tdoa'") from None


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


def _vec3(v, name) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {np.shape(v)}")
    return arr


@dataclass
class TagState:
    """Pose of the tag: position, velocity, roll/pitch/yaw and time."""

    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude: np.ndarray = field(default_factory=lambda: np.zeros(3))
    time: float = 0.0

    def __post_init__(self):
        self.position = _vec3(self.position, "position")
        self.velocity = _vec3(self.velocity, "velocity")
        self.attitude = wrap_angle(_vec3(self.attitude, "attitude"))
        self.time = float(self.time)
        for name in ("position", "velocity", "attitude"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"TagState.{name} must be finite")
        if not np.isfinite(self.time):
            raise ValueError("TagState.time must be finite")


@dataclass
class AnchorConstellation:
    """Fixed anchors with unique integer ids inside an axis-aligned arena."""

    ids: np.ndarray
    positions: np.ndarray
    bounds: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.bounds = np.asarray(self.bounds, dtype=float).reshape(2, 3)
        if self.ids.shape[0] != self.positions.shape[0]:
            raise ValueError("one position per anchor id required")
        if self.ids.shape[0] < 2:
            raise ValueError("at least two anchors are required")
        if len(set(self.ids.tolist())) != self.ids.shape[0]:
            raise ValueError("anchor ids must be unique")
        if not np.all(np.isfinite(self.positions)) or not np.all(np.isfinite(self.bounds)):
            raise ValueError("anchor positions and bounds must be finite")
        if np.any(self.bounds[1] <= self.bounds[0]):
            raise ValueError("arena bounds must satisfy min < max on every axis")
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        np.fill_diagonal(dist, np.inf)
        if dist.min() <= MIN_ANCHOR_SEPARATION:
            raise ValueError("anchors must be more than 1 cm apart")
        self._index = {int(a): k for k, a in enumerate(self.ids)}

    def __len__(self):
        return self.ids.shape[0]

    def index(self, anchor_id: int) -> int:
        try:
            return self._index[int(anchor_id)]
        except KeyError:
            raise KeyError(f"unknown anchor id {anchor_id}") from None

    def position(self, anchor_id: int) -> np.ndarray:
        return self.positions[self.index(anchor_id)]

    @property
    def max_range(self) -> float:
        """Length of the arena diagonal; an upper bound on in-arena ranges."""
        return float(np.linalg.norm(self.bounds[1] - self.bounds[0]))

    @classmethod
    def cuboid(cls, size=(7.0, 8.0, 3.0)) -> "AnchorConstellation":
        """One anchor on every vertex of a ``size`` box anchored at the origin.

        Ids alternate floor/ceiling so that consecutive pairs span all axes.
        """
        sx, sy, sz = size
        corners = [
            (0, 0, 0), (sx, 0, sz), (sx, sy, 0), (0, sy, sz),
            (sx, 0, 0), (0, 0, sz), (0, sy, 0), (sx, sy, sz),
        ]
        return cls(np.arange(8), np.array(corners, dtype=float), [[0, 0, 0], [sx, sy, sz]])

    @classmethod
    def from_dict(cls, doc: dict) -> "AnchorConstellation":
        try:
            anchors = doc["anchors"]
            ids = [int(a["id"]) for a in anchors]
            pos = [[float(c) for c in a["pos"]] for a in anchors]
            bounds = doc["bounds"]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed constellation document: {exc}") from None
        return cls(ids, pos, bounds)

    @classmethod
    def load(cls, path) -> "AnchorConstellation":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "anchors": [{"id": int(i), "pos": p.tolist()} for i, p in zip(self.ids, self.positions)],
            "bounds": self.bounds.tolist(),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    mode: Mode

    def __post_init__(self):
        mode = Mode.parse(self.mode)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.shape[0] != mode.feature_length:
            raise ValueError(f"{mode.value} feature must have length {mode.feature_length}")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature values must be finite")
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "values", values)

    @property
    def attitude(self) -> np.ndarray:
        return self.values[-3:]


def relative_position(tag: TagState, anchor_position) -> np.ndarray:
    """Vector from the tag to the anchor, ``anchor - tag``."""
    return np.asarray(anchor_position, dtype=float) - tag.position


def azimuth_elevation(delta_p, attitude) -> tuple[float, float]:
    """Bearing and elevation of ``delta_p`` seen from the tag.

    The azimuth is measured in the yaw-rotated body frame (roll and pitch are
    ignored). A purely vertical ``delta_p`` has azimuth 0 by convention.

    Returns
    -------
    alpha : float
        Azimuth in (-pi, pi].
    beta : float
        Elevation in [-pi/2, pi/2].
    """
    d = np.asarray(delta_p, dtype=float)
    norm = float(np.sqrt(d @ d))
    if norm == 0.0:
        raise GeometryError("zero-length relative position has no bearing")
    yaw = float(np.asarray(attitude, dtype=float)[2])
    horiz = np.hypot(d[0], d[1])
    if horiz == 0.0:
        alpha = 0.0
    else:
        alpha = float(wrap_angle(np.arctan2(d[1], d[0]) - yaw))
    beta = float(np.arcsin(np.clip(d[2] / norm, -1.0, 1.0)))
    return alpha, beta


def azimuth_elevation_batch(delta_p, yaw):
    """Vectorised :func:`azimuth_elevation` over rows of ``delta_p``."""
    d = np.asarray(delta_p, dtype=float)
    norm = np.linalg.norm(d, axis=-1)
    if np.any(norm == 0.0):
        raise GeometryError("zero-length relative position has no bearing")
    horiz = np.hypot(d[..., 0], d[..., 1])
    alpha = np.where(horiz == 0.0, 0.0, wrap_angle(np.arctan2(d[..., 1], d[..., 0]) - yaw))
    beta = np.arcsin(np.clip(d[..., 2] / norm, -1.0, 1.0))
    return alpha, beta


def twr_feature(tag: TagState, anchor_position) -> FeatureVector:
    return FeatureVector(
        np.concatenate([relative_position(tag, anchor_position), tag.attitude]), Mode.TWR
    )


def tdoa_feature(tag: TagState, anchor_i, anchor_j) -> FeatureVector:
    return FeatureVector(
        np.concatenate(
            [relative_position(tag, anchor_i), relative_position(tag, anchor_j), tag.attitude]
        ),
        Mode.TDOA,
    )


def feature_batch(mode: Mode, positions, attitudes, anchor_i, anchor_j=None) -> np.ndarray:
    """Stack features for many poses at once.

    ``positions``/``attitudes`` are (n, 3); ``anchor_i``/``anchor_j`` are (n, 3)
    anchor positions matched row-by-row.
    """
    blocks = [np.asarray(anchor_i) - positions]
    if Mode.parse(mode) is Mode.TDOA:
        blocks.append(np.asarray(anchor_j) - positions)
    blocks.append(wrap_angle(attitudes))
    return np.hstack(blocks)
