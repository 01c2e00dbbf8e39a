"""Experiment configuration: nested dataclasses with YAML round-tripping.

A config file is a nested key-value document; unknown keys are rejected so
typos fail loudly.  `load_config(emit_config(cfg))` reproduces cfg exactly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .auction import PolicyParams
from .baselines import BASELINES, BaselineConfig
from .traffic import ArrivalModel

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class SystemConfig:
    n_relays: int = 2
    n_t: int = 2
    n_r: int = 4
    n_q: int = 10


@dataclass
class PhyConfig:
    bandwidth_hz: float = 1.0e6
    frame_s: float = 5.0e-3
    packet_bits: float = 25_000.0

    @property
    def frame_symbols(self) -> float:
        return self.bandwidth_hz * self.frame_s


@dataclass
class ArrivalConfig:
    kind: str = "poisson"
    rate_pps: float = 200.0  # packets per second; mean/frame = rate_pps * frame_s


@dataclass
class ConstraintsConfig:
    snr_db: float = 16.0  # per-node average power over unit noise
    drop_target: float = 0.002

    @property
    def power_limit(self) -> float:
        return 10.0 ** (self.snr_db / 10.0)


@dataclass
class PolicyConfig:
    kind: str = "learned"  # learned | baseline1..5 | baseline | oracle_replay
    power_mode: str = "closed_form"  # closed_form | exact | grid
    p_max_factor: float = 10.0
    # for kind == "baseline" (custom combination)
    baseline_policy: str = "backpressure"
    baseline_duplex: str = "half"
    baseline_protocol: str = "bdf"

    def baseline(self) -> BaselineConfig:
        if self.kind in BASELINES:
            return BASELINES[self.kind]
        if self.kind == "baseline":
            return BaselineConfig(
                self.baseline_policy, self.baseline_duplex, self.baseline_protocol
            )
        raise ConfigError(f"policy kind {self.kind!r} is not a baseline")


@dataclass
class LearningConfig:
    exponents: tuple = (0.6, 0.8, 0.9)
    constants: tuple = (1.0, 0.1, 0.5)
    mode: str = "synthetic"  # per_paper | every_visit | synthetic
    monotone: bool = False  # optional non-per-paper stabilizer: isotonic rows
    lm_mode: str = "learn"  # learn | frozen
    gamma_init: tuple = (50.0, 1.0, 1.0)  # gamma_sd, gamma_sp, gamma_rp (all relays)
    snapshot_every: int = 2000
    convergence_window: int = 5
    value_tol: float = 0.01
    slack_tol: float = 0.05


@dataclass
class RunConfig:
    frames: int = 200_000
    seed: int = 1
    burn_in_frac: float = 0.2
    trace: bool = False


@dataclass
class OracleConfig:
    seed: int = 7
    n_t: int = 1
    n_r: int = 2
    n_q: int = 2
    states_per_link: int = 2
    power_levels: tuple = (0.0, 1.0, 2.0, 4.0)
    packet_bits: float = 1000.0
    frame_symbols: float = 1000.0
    arrival_values: tuple = (0, 1, 2)
    arrival_probs: tuple = (0.15, 0.35, 0.5)
    csi_scale: float = 1.5
    state_cap: int = 10_000
    train_frames: int = 100_000
    gamma: tuple = (20.0, 1.0, 1.0)  # frozen duals: gamma_sd, gamma_sp, gamma_rp


@dataclass
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    phy: PhyConfig = field(default_factory=PhyConfig)
    arrival: ArrivalConfig = field(default_factory=ArrivalConfig)
    constraints: ConstraintsConfig = field(default_factory=ConstraintsConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    learning: LearningConfig = field(default_factory=LearningConfig)
    run: RunConfig = field(default_factory=RunConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)

    def validate(self) -> "ExperimentConfig":
        s = self.system
        if min(s.n_relays, s.n_t, s.n_r, s.n_q) < 1:
            raise ConfigError("system dims must all be >= 1")
        if s.n_relays < 2 and self.policy.kind == "learned":
            raise ConfigError("the auction policy needs n_relays >= 2")
        if not 0 <= self.run.burn_in_frac < 1:
            raise ConfigError("run.burn_in_frac must be in [0, 1)")
        if self.run.frames < 1:
            raise ConfigError("run.frames must be >= 1")
        if self.phy.bandwidth_hz <= 0 or self.phy.frame_s <= 0 or self.phy.packet_bits <= 0:
            raise ConfigError("phy values must be positive")
        if self.constraints.drop_target <= 0:
            raise ConfigError("constraints.drop_target must be positive")
        known = ("learned", "baseline", "oracle_replay") + tuple(BASELINES)
        if self.policy.kind not in known:
            raise ConfigError(f"policy.kind {self.policy.kind!r} not one of {known}")
        self.arrival_model()  # raises on bad arrival settings
        if self.policy.kind.startswith("baseline"):
            self.policy.baseline()
        return self

    def arrival_model(self) -> ArrivalModel:
        return ArrivalModel(
            kind=self.arrival.kind,
            mean_per_frame=self.arrival.rate_pps * self.phy.frame_s,
        )

    def policy_params(self, power_grid=None) -> PolicyParams:
        p = self.constraints.power_limit
        return PolicyParams(
            packet_bits=self.phy.packet_bits,
            frame_symbols=self.phy.frame_symbols,
            p_max=self.policy.p_max_factor * p,
            power_mode="grid" if power_grid is not None else self.policy.power_mode,
            power_grid=tuple(power_grid) if power_grid is not None else None,
        )


_SECTIONS = {
    "system": SystemConfig,
    "phy": PhyConfig,
    "arrival": ArrivalConfig,
    "constraints": ConstraintsConfig,
    "policy": PolicyConfig,
    "learning": LearningConfig,
    "run": RunConfig,
    "oracle": OracleConfig,
}

_TUPLE_FIELDS = {
    "exponents", "constants", "gamma_init", "power_levels",
    "arrival_values", "arrival_probs", "gamma",
}


def _coerce_section(cls, data: dict, section: str):
    valid = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in data.items():
        if key not in valid:
            raise ConfigError(f"unknown key {section}.{key}")
        if key in _TUPLE_FIELDS and isinstance(val, (list, tuple)):
            val = tuple(val)
        kwargs[key] = val
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad section {section!r}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    data = dict(data)
    data.pop("schema_version", None)
    sections = {}
    for key, val in data.items():
        if key not in _SECTIONS:
            raise ConfigError(f"unknown section {key!r}; valid: {sorted(_SECTIONS)}")
        if not isinstance(val, dict):
            raise ConfigError(f"section {key!r} must be a mapping")
        sections[key] = _coerce_section(_SECTIONS[key], val, key)
    return ExperimentConfig(**sections).validate()


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {"schema_version": SCHEMA_VERSION}
    for name in _SECTIONS:
        section = dataclasses.asdict(getattr(cfg, name))
        out[name] = {
            k: (list(v) if isinstance(v, tuple) else v) for k, v in section.items()
        }
    return out


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data)


def emit_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=True)
