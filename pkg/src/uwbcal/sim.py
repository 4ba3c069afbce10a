"""Trajectories, open- and closed-loop experiments, dataset generation and RMSE metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from uwbcal import kernels
from uwbcal.estimator import EkfState, GateConfig, Reason
from uwbcal.geometry import AnchorConstellation, Mode, TagState, feature_batch, wrap_angle
from uwbcal.measurement import (
    BiasFieldParams,
    ErrorDraws,
    NoiseConfig,
    anchor_bias,
    bias_field_batch,
    compose_errors,
)
from uwbcal.nn import Dataset, MlpModel

GRAVITY = 9.81
MAX_TILT = np.deg2rad(15.0)
KINDS = ("circle_xy", "circle_varying_z", "generic_waypoints")


@dataclass(frozen=True)
class Trajectory:
    """Reference path.

    Circles run counter-clockwise at ``speed`` (horizontal); the varying-z
    circle oscillates ``z_amplitude`` around the center height twice per
    revolution. ``generic_waypoints`` joins ``waypoints`` with rest-to-rest
    smoothstep segments whose average speed is ``speed``.

    Circles may start with a take-off: ``ground_time`` seconds resting at
    ``ground_z`` below the circle's start point, then a ``climb_time`` smoothstep
    climb. ``duration`` includes both phases.
    """

    kind: str = "circle_xy"
    center: tuple = (3.5, 4.0, 1.5)
    radius: float = 2.0
    speed: float = 0.375
    duration: float = 60.0
    sample_rate: float = 200.0
    z_amplitude: float = 1.0
    waypoints: tuple | None = None
    ground_time: float = 0.0
    climb_time: float = 0.0
    ground_z: float = 0.05

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}; expected one of {KINDS}")
        if self.speed <= 0 or self.duration <= 0 or self.sample_rate <= 0:
            raise ValueError("speed, duration and sample_rate must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.kind == "generic_waypoints":
            wp = np.asarray(self.waypoints, dtype=float)
            if wp.ndim != 2 or wp.shape[1] != 3 or wp.shape[0] < 2:
                raise ValueError("generic_waypoints needs at least two 3-D waypoints")
            object.__setattr__(self, "waypoints", tuple(map(tuple, wp.tolist())))
            seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
            if np.any(seg <= 0):
                raise ValueError("consecutive waypoints must differ")
            total = seg.sum() / self.speed
            if total < self.duration:
                raise ValueError(f"waypoints cover {total:.1f} s, shorter than duration {self.duration}")
        elif self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.ground_time < 0 or self.climb_time < 0:
            raise ValueError("ground_time and climb_time must be non-negative")
        if self.kind == "generic_waypoints" and self.takeoff_time > 0:
            raise ValueError("take-off phases are only defined for circles")
        if self.takeoff_time >= self.duration:
            raise ValueError("take-off must end before the trajectory does")

    @property
    def period(self) -> float:
        return 2.0 * np.pi * self.radius / self.speed

    @property
    def takeoff_time(self) -> float:
        return self.ground_time + self.climb_time


def _attitude_from_motion(vel, acc, fallback_yaw=None):
    yaw = np.arctan2(vel[:, 1], vel[:, 0])
    if fallback_yaw is not None:
        still = np.hypot(vel[:, 0], vel[:, 1]) < 1e-9
        yaw = np.where(still, fallback_yaw, yaw)
    c, s = np.cos(yaw), np.sin(yaw)
    a_fwd = c * acc[:, 0] + s * acc[:, 1]
    a_lat = -s * acc[:, 0] + c * acc[:, 1]
    pitch = np.clip(np.arctan2(a_fwd, GRAVITY), -MAX_TILT, MAX_TILT)
    roll = np.clip(np.arctan2(-a_lat, GRAVITY), -MAX_TILT, MAX_TILT)
    return np.column_stack([roll, pitch, wrap_angle(yaw)])


def trajectory_states(traj: Trajectory, times):
    """Vectorised reference pose: returns ``(position, velocity, attitude)`` arrays (n, 3)."""
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(t < 0) or np.any(t > traj.duration + 1e-9):
        raise ValueError(f"time outside [0, {traj.duration}]")
    if traj.kind == "generic_waypoints":
        return _waypoint_states(traj, t)
    if traj.takeoff_time > 0:
        return _takeoff_circle_states(traj, t)
    return _circle_states(traj, t)


def _circle_states(traj: Trajectory, t):
    c = np.asarray(traj.center)
    w = traj.speed / traj.radius
    th = w * t
    R = traj.radius
    pos = np.column_stack([c[0] + R * np.cos(th), c[1] + R * np.sin(th), np.full_like(t, c[2])])
    vel = np.column_stack([-R * w * np.sin(th), R * w * np.cos(th), np.zeros_like(t)])
    acc = np.column_stack([-R * w * w * np.cos(th), -R * w * w * np.sin(th), np.zeros_like(t)])
    if traj.kind == "circle_varying_z":
        A = traj.z_amplitude
        pos[:, 2] += A * np.sin(2.0 * th)
        vel[:, 2] = 2.0 * w * A * np.cos(2.0 * th)
        acc[:, 2] = -4.0 * w * w * A * np.sin(2.0 * th)
    return pos, vel, _attitude_from_motion(vel, acc)


def _takeoff_circle_states(traj: Trajectory, t):
    t0 = traj.takeoff_time
    pos, vel, att = _circle_states(traj, np.maximum(t - t0, 0.0))
    start, _, start_att = _circle_states(traj, np.zeros(1))
    pre = t < t0
    if np.any(pre):
        tau = np.clip((t[pre] - traj.ground_time) / max(traj.climb_time, 1e-12), 0.0, 1.0)
        h = start[0, 2] - traj.ground_z
        pos[pre] = start[0]
        pos[pre, 2] = traj.ground_z + h * tau * tau * (3.0 - 2.0 * tau)
        vel[pre] = 0.0
        if traj.climb_time > 0:
            vel[pre, 2] = h * 6.0 * tau * (1.0 - tau) / traj.climb_time
        att[pre] = 0.0
        att[pre, 2] = start_att[0, 2]
    return pos, vel, att


def _waypoint_states(traj: Trajectory, t):
    wp = np.asarray(traj.waypoints)
    delta = np.diff(wp, axis=0)
    length = np.linalg.norm(delta, axis=1)
    seg_T = length / traj.speed
    starts = np.concatenate([[0.0], np.cumsum(seg_T)])
    k = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(seg_T) - 1)
    T = seg_T[k]
    tau = np.clip((t - starts[k]) / T, 0.0, 1.0)
    s = tau * tau * (3.0 - 2.0 * tau)
    ds = 6.0 * tau * (1.0 - tau) / T
    dds = (6.0 - 12.0 * tau) / (T * T)
    d = delta[k]
    pos = wp[k] + d * s[:, None]
    vel = d * ds[:, None]
    acc = d * dds[:, None]
    seg_yaw = np.arctan2(delta[:, 1], delta[:, 0])
    # vertical-only segments inherit the previous heading
    for n in range(1, len(seg_yaw)):
        if np.hypot(*delta[n, :2]) < 1e-9:
            seg_yaw[n] = seg_yaw[n - 1]
    return pos, vel, _attitude_from_motion(vel, acc, fallback_yaw=seg_yaw[k])


def trajectory_pose(traj: Trajectory, t: float) -> TagState:
    pos, vel, att = trajectory_states(traj, [t])
    return TagState(pos[0], vel[0], att[0], t)


def random_waypoints(bounds, n: int, rng: np.random.Generator, margin: float = 0.2) -> np.ndarray:
    """Draw ``n`` waypoints inside the arena shrunk by ``margin``.

    Each axis follows the arcsine law Beta(1/2, 1/2). Straight legs between
    uniform points rarely visit walls and corners; pushing the endpoints
    outwards evens out voxel coverage of the flown paths.
    """
    lo = np.asarray(bounds[0], dtype=float) + margin
    hi = np.asarray(bounds[1], dtype=float) - margin
    return lo + (hi - lo) * rng.beta(0.5, 0.5, (n, 3))


def check_in_bounds(traj: Trajectory, bounds, margin: float = 0.2) -> None:
    """Raise unless the airborne part of ``traj`` keeps ``margin`` from every wall."""
    t = np.linspace(traj.takeoff_time, traj.duration, max(int(traj.duration * 20), 2))
    pos, _, _ = trajectory_states(traj, t)
    lo, hi = np.asarray(bounds[0]) + margin - 1e-9, np.asarray(bounds[1]) - margin + 1e-9
    if np.any(pos < lo) or np.any(pos > hi):
        raise ValueError("trajectory leaves the arena interior margin")


def measurement_schedule(constellation: AnchorConstellation, mode, n: int):
    """Round-robin anchor indices: anchor k for TWR, pair (k, k+1) for TDoA."""
    m = len(constellation)
    k = np.arange(n) % m
    if Mode.parse(mode) is Mode.TWR:
        return k, k
    return k, (k + 1) % m


def default_gate(noise: NoiseConfig, mode, model: MlpModel | None, compensation: bool) -> GateConfig:
    """Gate with R taken from the model's calibration scales when available, else sigma^2."""
    gate = GateConfig.from_noise(noise)
    if model is None or Mode.parse(mode) is not model.mode:
        return gate
    scale = model.residual_scale if compensation else model.raw_scale
    if not np.isfinite(scale) or scale <= 0:
        return gate
    key = "r_twr" if model.mode is Mode.TWR else "r_tdoa"
    return replace(gate, **{key: scale**2})


@dataclass
class RunConfig:
    trajectory: Trajectory = field(default_factory=Trajectory)
    constellation: AnchorConstellation = field(default_factory=AnchorConstellation.cuboid)
    bias: BiasFieldParams = field(default_factory=BiasFieldParams)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    gate: GateConfig | None = None
    model: MlpModel | None = None
    mode: Mode = Mode.TDOA
    compensation: bool = True
    rejection: bool = True
    seed: int = 0
    process_noise: float = 0.5
    init_pos_std: float = 0.05
    init_vel_std: float = 0.05
    burn_in: float = 1.0
    divergence_distance: float = 5.0
    controller_gain: float = 1.0
    controller_saturation: float = 1.0
    perfect_estimation: bool = False

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        if self.gate is None:
            self.gate = default_gate(self.noise, self.mode, self.model, self.compensation)
        if self.compensation and self.model is None:
            raise ValueError("compensation is on but no bias model was given")
        if self.model is not None and self.compensation and self.model.mode is not self.mode:
            raise ValueError(f"{self.model.mode.value} model supplied for a {self.mode.value} run")
        if self.trajectory.sample_rate > 200.0:
            raise ValueError("measurement rate above 200 Hz")
        check_in_bounds(self.trajectory, self.constellation.bounds)

    @property
    def gate_config(self) -> GateConfig:
        g = self.gate
        return GateConfig(g.a_max, g.chi2_threshold, g.dynamics_window, g.r_twr, g.r_tdoa, self.rejection)


COLUMNS = ("t", "i", "j", "raw", "compensated", "y_tilde", "S", "reason", "outlier",
           "true_x", "true_y", "true_z", "est_x", "est_y", "est_z", "cmd_x", "cmd_y", "cmd_z")
REASON_CODES = (Reason.ACCEPTED, Reason.REJECTED_DYNAMICS, Reason.REJECTED_CHI2)


@dataclass
class RunLog:
    """Per-step records (columnar) plus run metadata and summary.

    ``reason`` holds indices into :data:`REASON_CODES`; ``outlier`` is the
    simulator's ground-truth NLOS flag (debug channel, not seen by the filter).
    """

    meta: dict
    columns: dict
    summary: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.columns["t"])

    @property
    def true_pos(self):
        return np.column_stack([self.columns[k] for k in ("true_x", "true_y", "true_z")])

    @property
    def est_pos(self):
        return np.column_stack([self.columns[k] for k in ("est_x", "est_y", "est_z")])

    @property
    def cmd_pos(self):
        return np.column_stack([self.columns[k] for k in ("cmd_x", "cmd_y", "cmd_z")])

    def records(self):
        mode = self.meta["mode"]
        tdoa = mode == Mode.TDOA.value
        cols = {k: np.asarray(v).tolist() for k, v in self.columns.items()}
        for n in range(len(self)):
            rec = {k: cols[k][n] for k in COLUMNS}
            rec["mode"] = mode
            rec["j"] = rec["j"] if tdoa else None
            rec["reason"] = REASON_CODES[rec["reason"]].value
            rec["outlier"] = bool(rec["outlier"])
            yield rec

    def save(self, path) -> Path:
        """Write ``path`` (JSON lines) and ``<path>.summary.json``; returns the summary path."""
        path = Path(path)
        with open(path, "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")
        summary_path = path.with_name(path.name + ".summary.json")
        doc = {"meta": self.meta, "summary": self.summary}
        summary_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return summary_path

    @classmethod
    def load(cls, path) -> "RunLog":
        path = Path(path)
        doc = json.loads(path.with_name(path.name + ".summary.json").read_text())
        cols = {k: [] for k in COLUMNS}
        reason_index = {r.value: n for n, r in enumerate(REASON_CODES)}
        with open(path) as fh:
            for line in fh:
                rec = json.loads(line)
                for k in COLUMNS:
                    v = rec[k]
                    if k == "reason":
                        v = reason_index[v]
                    elif k == "j" and v is None:
                        v = rec["i"]
                    cols[k].append(v)
        columns = {k: np.asarray(v) for k, v in cols.items()}
        return cls(doc["meta"], columns, doc["summary"])


def metrics(log: RunLog, burn_in: float = 1.0) -> dict:
    """RMSE of estimation error ``|p_est - p|`` and tracking error ``|p - p_cmd|`` after burn-in."""
    if len(log) == 0:
        raise ValueError("empty run log")
    t = np.asarray(log.columns["t"], dtype=float)
    keep = t >= burn_in
    if not np.any(keep):
        raise ValueError("no records after burn-in")
    err = log.est_pos[keep] - log.true_pos[keep]
    trk = log.true_pos[keep] - log.cmd_pos[keep]
    e2 = np.einsum("ij,ij->i", err, err)
    et2 = np.einsum("ij,ij->i", trk, trk)
    reasons = np.asarray(log.columns["reason"])
    outl = np.asarray(log.columns["outlier"], dtype=bool)
    rejected = reasons != 0
    return {
        "rmse": float(np.sqrt(e2.mean())),
        "rmse_axis": np.sqrt((err**2).mean(axis=0)).tolist(),
        "tracking_rmse": float(np.sqrt(et2.mean())),
        "n_records": int(len(log)),
        "n_scored": int(keep.sum()),
        "counts": {r.value: int(np.sum(reasons == n)) for n, r in enumerate(REASON_CODES)},
        "n_outliers": int(outl.sum()),
        "outliers_rejected": int(np.sum(outl & rejected)),
        "inliers_rejected": int(np.sum(~outl & rejected)),
        "burn_in": float(burn_in),
        "diverged": bool(log.meta.get("diverged", False)),
    }


class _Filter:
    """The estimation pipeline specialised to one run; mirrors :func:`estimator.update`."""

    def __init__(self, cfg: RunConfig, state: EkfState):
        self.mode = cfg.mode
        self.tdoa = cfg.mode is Mode.TDOA
        self.anchors = np.ascontiguousarray(cfg.constellation.positions)
        self.gate = cfg.gate_config
        self.r = self.gate.measurement_variance(cfg.mode)
        self.model = cfg.model if cfg.compensation else None
        self.q = cfg.process_noise
        self.x = state.mean.copy()
        self.P = state.cov.copy()
        if self.model is not None:
            self.params = self.model.params()
            self.mu, self.sd = self.model.norm_mean, self.model.norm_std

    def predict(self, dt):
        self.x, self.P = kernels.ekf_predict(self.x, self.P, dt, self.q)

    def step(self, raw, ii, jj, attitude):
        pi = self.anchors[ii]
        pj = self.anchors[jj]
        p = self.x[:3]
        value = raw
        if self.model is not None:
            if self.tdoa:
                feat = np.concatenate([pi - p, pj - p, attitude])
            else:
                feat = np.concatenate([pi - p, attitude])
            value = raw - kernels.mlp_forward_one((feat - self.mu) / self.sd, *self.params)
        pred, h = kernels.range_jacobian(np.ascontiguousarray(p), pi, pj, self.tdoa)
        y = value - pred
        S = float(h @ self.P @ h) + self.r
        reason = 0
        if self.gate.rejection:
            v = self.x[3:]
            d_max = float(np.sqrt(v @ v)) * self.gate.dynamics_window \
                + 0.5 * self.gate.a_max * self.gate.dynamics_window**2
            if abs(y) > (2.0 * d_max if self.tdoa else d_max):
                reason = 1
            elif y * y / S > self.gate.chi2_threshold:
                reason = 2
        if reason == 0:
            self.x, self.P = kernels.ekf_update(self.x, self.P, h, y, self.r)
        return value, y, S, reason


def _true_values(cfg: RunConfig, pos, att, ii, jj):
    A = cfg.constellation.positions
    pi, pj = A[ii], A[jj]
    ri = np.linalg.norm(pos - pi, axis=-1)
    if cfg.mode is Mode.TWR:
        true = ri
        b = anchor_bias(pi - pos, att[..., 2], cfg.bias)
    else:
        true = ri - np.linalg.norm(pos - pj, axis=-1)
        b = anchor_bias(pi - pos, att[..., 2], cfg.bias) - anchor_bias(pj - pos, att[..., 2], cfg.bias)
    return true, b


def _run(cfg: RunConfig, closed_loop: bool) -> RunLog:
    traj = cfg.trajectory
    rate = traj.sample_rate
    dt = 1.0 / rate
    n = int(round(traj.duration * rate))
    times = dt * np.arange(1, n + 1)
    rng = np.random.default_rng(cfg.seed)
    draws = ErrorDraws.draw(n, rng)
    ii, jj = measurement_schedule(cfg.constellation, cfg.mode, n)
    ref_pos, ref_vel, ref_att = trajectory_states(traj, times)

    p0, v0, _ = trajectory_states(traj, [0.0])
    state = EkfState.initial(p0[0], v0[0], cfg.init_pos_std, cfg.init_vel_std)
    filt = _Filter(cfg, state)

    cols = {k: np.zeros(n) for k in COLUMNS}
    cols["i"] = np.zeros(n, dtype=np.int64)
    cols["j"] = np.zeros(n, dtype=np.int64)
    cols["reason"] = np.zeros(n, dtype=np.int64)
    cols["outlier"] = np.zeros(n, dtype=bool)

    if not closed_loop:
        true_pos = ref_pos
        true, b = _true_values(cfg, true_pos, ref_att, ii, jj)
        err, outl = compose_errors(cfg.mode, cfg.noise, draws, height=true_pos[:, 2])
        raw_all = true + b + err
    p_true = p0[0].copy()
    p_cmd_prev, v_ref_prev = p0[0], v0[0]
    lo, hi = cfg.constellation.bounds
    diverged_at = None
    sat = cfg.controller_saturation
    for k in range(n):
        if closed_loop:
            p_fb = p_true if cfg.perfect_estimation else filt.x[:3]
            u = cfg.controller_gain * (p_cmd_prev - p_fb)
            un = float(np.sqrt(u @ u))
            if un > sat:
                u *= sat / un
            p_true = p_true + (v_ref_prev + u) * dt
            true, b = _true_values(cfg, p_true, ref_att[k], ii[k], jj[k])
            e, o = compose_errors(cfg.mode, cfg.noise, draws, k, height=p_true[2])
            raw = float(true + b + e)
            outlier = bool(o)
            p_cmd_prev, v_ref_prev = ref_pos[k], ref_vel[k]
            tp = p_true
        else:
            raw = float(raw_all[k])
            outlier = bool(outl[k])
            tp = true_pos[k]
        filt.predict(dt)
        value, y, S, reason = filt.step(raw, ii[k], jj[k], ref_att[k])
        est = filt.x[:3]
        cols["t"][k] = times[k]
        cols["i"][k] = cfg.constellation.ids[ii[k]]
        cols["j"][k] = cfg.constellation.ids[jj[k]]
        cols["raw"][k] = raw
        cols["compensated"][k] = value
        cols["y_tilde"][k] = y
        cols["S"][k] = S
        cols["reason"][k] = reason
        cols["outlier"][k] = outlier
        cols["true_x"][k], cols["true_y"][k], cols["true_z"][k] = tp
        cols["est_x"][k], cols["est_y"][k], cols["est_z"][k] = est
        cols["cmd_x"][k], cols["cmd_y"][k], cols["cmd_z"][k] = ref_pos[k]
        if closed_loop:
            gone = np.linalg.norm(est - tp) > cfg.divergence_distance
        else:
            outside = np.maximum(np.maximum(lo - est, est - hi), 0.0)
            gone = np.linalg.norm(outside) > cfg.divergence_distance
        if gone or not np.all(np.isfinite(est)):
            diverged_at = float(times[k])
            cols = {c: v[:k + 1] for c, v in cols.items()}
            break

    meta = {
        "mode": cfg.mode.value,
        "closed_loop": closed_loop,
        "trajectory": {"kind": traj.kind, "center": list(traj.center), "radius": traj.radius,
                       "speed": traj.speed, "duration": traj.duration, "rate": rate,
                       "z_amplitude": traj.z_amplitude, "ground_time": traj.ground_time,
                       "climb_time": traj.climb_time,
                       "waypoints": None if traj.waypoints is None else [list(w) for w in traj.waypoints]},
        "compensation": cfg.compensation,
        "rejection": cfg.rejection,
        "seed": int(cfg.seed),
        "burn_in": float(cfg.burn_in),
        "diverged": diverged_at is not None,
        "diverged_at": diverged_at,
    }
    log = RunLog(meta, cols)
    if len(log) and log.columns["t"][-1] >= cfg.burn_in:
        log.summary = metrics(log, cfg.burn_in)
    else:
        # stopped before any record was scored
        log.summary = {"rmse": float("nan"), "tracking_rmse": float("nan"), "n_records": len(log),
                       "n_scored": 0, "burn_in": float(cfg.burn_in), "diverged": meta["diverged"]}
    return log


def run_estimation(cfg: RunConfig) -> RunLog:
    """Open-loop run: the tag follows the reference exactly while the EKF tracks it."""
    return _run(cfg, closed_loop=False)


def run_closed_loop(cfg: RunConfig) -> RunLog:
    """Closed-loop run: ``v = v_ref + sat(K (p_cmd - p_est))`` drives the true tag.

    Stops early and flags divergence once the estimate is further than
    ``divergence_distance`` from the truth.
    """
    return _run(cfg, closed_loop=True)


@dataclass(frozen=True)
class DatasetConfig:
    n_flights: int = 40
    flight_duration: float = 100.0
    rate: float = 50.0
    speed: float = 0.75
    margin: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.n_flights < 1:
            raise ValueError("n_flights must be >= 1")
        if self.flight_duration <= 0 or self.rate <= 0 or self.speed <= 0:
            raise ValueError("flight_duration, rate and speed must be positive")


def flight_trajectory(bounds, rng, cfg: DatasetConfig) -> Trajectory:
    """Random rest-to-rest waypoint flight long enough for ``cfg.flight_duration``."""
    wps = [random_waypoints(bounds, 1, rng, cfg.margin)[0]]
    covered = 0.0
    while covered < cfg.speed * cfg.flight_duration * 1.01:
        nxt = random_waypoints(bounds, 1, rng, cfg.margin)[0]
        covered += float(np.linalg.norm(nxt - wps[-1]))
        wps.append(nxt)
    return Trajectory(kind="generic_waypoints", speed=cfg.speed, duration=cfg.flight_duration,
                      sample_rate=cfg.rate, waypoints=tuple(map(tuple, wps)))


def generate_dataset(constellation: AnchorConstellation, bias: BiasFieldParams, noise: NoiseConfig,
                     mode, cfg: DatasetConfig = DatasetConfig()) -> Dataset:
    """Fly random waypoint trajectories and log (feature, measured - true range) pairs.

    Features use the true pose, as a motion-capture system would provide.
    """
    mode = Mode.parse(mode)
    rng = np.random.default_rng(cfg.seed)
    n = int(round(cfg.flight_duration * cfg.rate))
    A = constellation.positions
    feats, targets = [], []
    for _ in range(cfg.n_flights):
        traj = flight_trajectory(constellation.bounds, rng, cfg)
        pos, _, att = trajectory_states(traj, np.arange(n) / cfg.rate)
        ii, jj = measurement_schedule(constellation, mode, n)
        X = feature_batch(mode, pos, att, A[ii], A[jj])
        b = bias_field_batch(mode, X, bias)
        err, _ = compose_errors(mode, noise, ErrorDraws.draw(n, rng), height=pos[:, 2])
        feats.append(X)
        targets.append(b + err)
    return Dataset(mode, np.vstack(feats), np.concatenate(targets))
