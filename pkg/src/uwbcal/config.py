"""Experiment configuration: one TOML document, validated and layered over defaults.

Sections mirror the library's config objects::

    [constellation]  size = [7, 8, 3]   or   file = "anchors.json"
    [trajectory]     kind, center, radius, speed, duration, sample_rate, ...
    [bias]           BiasFieldParams fields
    [noise]          NoiseConfig fields
    [gate]           a_max, chi2_threshold, dynamics_window, r_twr, r_tdoa
    [train]          TrainConfig fields
    [dataset]        DatasetConfig fields
    [run]            mode, compensation, rejection, closed_loop, seed, model, ...

Unknown sections or keys raise :class:`ConfigError`. Values are applied in
the order defaults < file < overrides (the CLI passes its flags as overrides).
"""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

from uwbcal.estimator import CHI2_1DOF_95, GateConfig
from uwbcal.geometry import AnchorConstellation, Mode
from uwbcal.measurement import BiasFieldParams, NoiseConfig
from uwbcal.nn import MlpModel, TrainConfig
from uwbcal.sim import DatasetConfig, RunConfig, Trajectory, default_gate

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid configuration document or value."""


@dataclass(frozen=True)
class ConstellationSection:
    """Either a ``size`` cuboid with anchors on its vertices or a JSON ``file``."""

    size: tuple = (7.0, 8.0, 3.0)
    file: str | None = None

    def build(self) -> AnchorConstellation:
        if self.file is not None:
            return AnchorConstellation.load(self.file)
        if len(self.size) != 3:
            raise ConfigError("constellation.size must have three entries")
        return AnchorConstellation.cuboid(tuple(float(s) for s in self.size))


@dataclass(frozen=True)
class GateSection:
    """Gate settings; ``r_twr``/``r_tdoa`` left unset are derived per run.

    Unset variances come from the model's calibration scales when a model is
    loaded and from the noise sigmas otherwise.
    """

    a_max: float = 10.0
    chi2_threshold: float = CHI2_1DOF_95
    dynamics_window: float = 0.25
    r_twr: float | None = None
    r_tdoa: float | None = None


@dataclass(frozen=True)
class RunSection:
    mode: str = "tdoa"
    compensation: bool = True
    rejection: bool = True
    closed_loop: bool = False
    seed: int = 0
    seeds: int = 1
    model: str | None = None
    process_noise: float = 0.5
    init_pos_std: float = 0.05
    init_vel_std: float = 0.05
    burn_in: float = 1.0
    divergence_distance: float = 5.0
    controller_gain: float = 1.0
    controller_saturation: float = 1.0

    def __post_init__(self):
        Mode.parse(self.mode)
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")


SECTIONS = {
    "constellation": ConstellationSection,
    "trajectory": Trajectory,
    "bias": BiasFieldParams,
    "noise": NoiseConfig,
    "gate": GateSection,
    "train": TrainConfig,
    "dataset": DatasetConfig,
    "run": RunSection,
}

_TUPLE_KEYS = {("constellation", "size"), ("trajectory", "center"), ("trajectory", "waypoints"),
               ("bias", "amplitude_az"), ("bias", "phase")}


def _freeze(section, key, value):
    if (section, key) in _TUPLE_KEYS and isinstance(value, list):
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return value


def _section_values(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}


@dataclass
class ExperimentConfig:
    """Every experiment setting, with a documented default for each field."""

    constellation: ConstellationSection = field(default_factory=ConstellationSection)
    trajectory: Trajectory = field(default_factory=Trajectory)
    bias: BiasFieldParams = field(default_factory=BiasFieldParams)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    gate: GateSection = field(default_factory=GateSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    run: RunSection = field(default_factory=RunSection)

    @classmethod
    def from_dict(cls, doc: dict | None = None, overrides: dict | None = None) -> "ExperimentConfig":
        """Layer ``doc`` then ``overrides`` (``{"section.key": value}``) over defaults."""
        merged = {name: {} for name in SECTIONS}
        for name, body in (doc or {}).items():
            if name not in SECTIONS:
                raise ConfigError(f"unknown section [{name}]; expected one of {sorted(SECTIONS)}")
            if not isinstance(body, dict):
                raise ConfigError(f"[{name}] must be a table")
            merged[name].update(body)
        for dotted, value in (overrides or {}).items():
            name, _, key = dotted.partition(".")
            if name not in SECTIONS or not key:
                raise ConfigError(f"bad override key {dotted!r}")
            merged[name][key] = value

        built = {}
        for name, section_cls in SECTIONS.items():
            known = {f.name for f in dataclasses.fields(section_cls)}
            unknown = sorted(set(merged[name]) - known)
            if unknown:
                raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
            kwargs = {k: _freeze(name, k, v) for k, v in merged[name].items()}
            try:
                built[name] = section_cls(**kwargs)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{name}] {exc}") from None
        return cls(**built)

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "ExperimentConfig":
        doc = {}
        if path is not None:
            try:
                with open(path, "rb") as fh:
                    doc = tomllib.load(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(doc, overrides)

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            values = _section_values(getattr(self, name))
            out[name] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in values.items()}
        return out

    def validate_references(self) -> None:
        """Check referenced files exist before any work starts."""
        for label, path in (("constellation.file", self.constellation.file), ("run.model", self.run.model)):
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{label}: no such file {path}")

    def build_constellation(self) -> AnchorConstellation:
        try:
            return self.constellation.build()
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"[constellation] {exc}") from None

    def gate_config(self, mode, model: MlpModel | None, compensation: bool) -> GateConfig:
        g = self.gate
        base = default_gate(self.noise, mode, model, compensation)
        return GateConfig(
            a_max=g.a_max,
            chi2_threshold=g.chi2_threshold,
            dynamics_window=g.dynamics_window,
            r_twr=base.r_twr if g.r_twr is None else g.r_twr,
            r_tdoa=base.r_tdoa if g.r_tdoa is None else g.r_tdoa,
        )

    def run_config(self, model: MlpModel | None, seed: int,
                   constellation: AnchorConstellation | None = None) -> RunConfig:
        r = self.run
        mode = Mode.parse(r.mode)
        return RunConfig(
            trajectory=self.trajectory,
            constellation=constellation or self.build_constellation(),
            bias=self.bias,
            noise=self.noise,
            gate=self.gate_config(mode, model, r.compensation),
            model=model,
            mode=mode,
            compensation=r.compensation,
            rejection=r.rejection,
            seed=seed,
            process_noise=r.process_noise,
            init_pos_std=r.init_pos_std,
            init_vel_std=r.init_vel_std,
            burn_in=r.burn_in,
            divergence_distance=r.divergence_distance,
            controller_gain=r.controller_gain,
            controller_saturation=r.controller_saturation,
        )
