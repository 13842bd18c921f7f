"""Experiment configuration with the published hyperparameters as defaults."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

AGENTS = ("opac-cv", "opac-mv", "sac")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    env: str = "Empty-6x6"
    agent: str = "opac-cv"
    seeds: list = field(default_factory=lambda: [0])
    iterations: int = 100

    # network and optimisation
    hidden: int = 256
    layers_policy: int = 2
    layers_critic: int = 2
    layers_visitation: int = 2
    lr_policy: float = 1e-5
    lr_critic: float = 1e-4
    lr_visitation: float = 1e-5
    max_steps: int = 200
    buffer_size: int = 1000
    batch_size: int = 32
    tau_critic: float = 0.1
    tau_visitation: float = 1.0
    gamma: float = 0.98
    lambda_sac: float = 0.002
    lam: float = 0.01
    horizon: int = 10

    # loop structure (not fixed by the published table)
    visitation_steps: int = 8
    critic_steps: int = 8
    actor_steps: int = 1
    actor_baseline: bool = True
    trajectories_per_iteration: int = 1
    init_trajectories: int = 1
    extrinsic: bool = True
    mv_smoothing: float = 1e-3

    # evaluation
    eval_every: int = 1
    eval_rollouts: int = 20

    def validate(self) -> "ExperimentConfig":
        if self.agent not in AGENTS:
            raise ConfigError("agent", f"must be one of {AGENTS}, got {self.agent!r}")
        if not self.seeds:
            raise ConfigError("seeds", "at least one seed is required")
        for name in ("lr_policy", "lr_critic", "lr_visitation", "tau_critic", "tau_visitation"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be positive")
        for name in ("tau_critic", "tau_visitation"):
            if getattr(self, name) > 1:
                raise ConfigError(name, "must not exceed 1")
        for name in ("iterations", "hidden", "layers_policy", "layers_critic", "layers_visitation", "max_steps",
                     "buffer_size", "batch_size", "horizon", "trajectories_per_iteration", "eval_every", "eval_rollouts", "actor_steps"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, "must be >= 1")
        for name in ("visitation_steps", "critic_steps", "init_trajectories"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(name, "must be >= 0")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma", "must lie in [0, 1)")
        for name in ("lambda_sac", "lam", "mv_smoothing"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be non-negative")
        return self

    def replace(self, **changes) -> "ExperimentConfig":
        data = asdict(self)
        data.update(changes)
        return ExperimentConfig(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration key")
        return cls(**data)


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a JSON config; missing keys take the defaults."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"{path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data).validate()


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")
