"""YAML-backed run configuration.

One file, six sections (grid, model, train, policy, acquisition, data),
each mapping onto the corresponding dataclass. Keys are validated strictly:
unknown keys and unknown sections are configuration errors rather than
silent typos.

A few values are single-sourced to keep runs coherent: the model always
inherits its grid shape from the grid section, the policies inherit the
line budget and posterior draw count from the acquisition section, and
every consumer of the observation noise level reads train.noise_std.
Setting one of those in the wrong section is rejected with a pointer to
the right one.
"""

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigurationError, RejectedInputError
from .evaluate import AcquisitionConfig
from .model import ModelConfig
from .phantom import PhantomConfig
from .polar import PolarGridSpec
from .policy import PolicyConfig
from .training import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    """Dataset source, sizes, and the seed the phantom splits derive from.

    source "synthetic_phantom" generates videos on the fly; source
    "echonet_format" loads Cartesian .npy stacks from the directory given
    in path (which must contain a manifest.json).
    """

    source: str = "synthetic_phantom"
    path: str = None
    base_seed: int = 0
    n_train: int = 200
    n_val: int = 25
    n_test: int = 25
    n_frames: int = 20

    def __post_init__(self):
        if self.source not in ("synthetic_phantom", "echonet_format"):
            raise RejectedInputError(
                "data source must be synthetic_phantom or echonet_format")
        if self.source == "echonet_format" and not self.path:
            raise RejectedInputError(
                "data.path is required when source is echonet_format")
        if min(self.n_train, self.n_val, self.n_test, self.n_frames) < 1:
            raise RejectedInputError("dataset sizes must be positive")


@dataclass(frozen=True)
class Config:
    grid: PolarGridSpec
    model: ModelConfig
    train: TrainConfig
    policy: PolicyConfig
    acquisition: AcquisitionConfig
    data: DataConfig
    phantom: PhantomConfig


_SECTIONS = {
    "grid": PolarGridSpec,
    "model": ModelConfig,
    "train": TrainConfig,
    "policy": PolicyConfig,
    "acquisition": AcquisitionConfig,
    "data": DataConfig,
    "phantom": PhantomConfig,
}

# section -> {key: where it actually lives}
_DERIVED = {
    "model": {"n_r": "grid.n_r", "n_gamma": "grid.n_gamma"},
    "policy": {"n_lines": "acquisition.n_lines",
               "n_posterior_samples": "acquisition.n_posterior_samples",
               "noise_std": "train.noise_std"},
    "acquisition": {"noise_std": "train.noise_std"},
    "train": {"loss_weights": "the grid (density weights are computed from "
                              "it at run time)"},
}


def _build_section(name, cls, raw, derived):
    allowed = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in allowed:
            raise ConfigurationError(
                f"unknown key {name}.{key}; allowed: {', '.join(sorted(allowed))}")
        if key in _DERIVED.get(name, {}):
            raise ConfigurationError(
                f"{name}.{key} is derived from {_DERIVED[name][key]}; set it there")
    try:
        return cls(**{**raw, **derived})
    except (RejectedInputError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid [{name}] section: {exc}") from exc


def config_from_dict(data):
    """Build a validated Config from a nested plain dict."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be a mapping of sections")
    for section in data:
        if section not in _SECTIONS:
            raise ConfigurationError(
                f"unknown section [{section}]; allowed: "
                f"{', '.join(sorted(_SECTIONS))}")
        if not isinstance(data[section], dict):
            raise ConfigurationError(f"section [{section}] must be a mapping")
    grid = _build_section("grid", PolarGridSpec, data.get("grid", {}), {})
    train = _build_section("train", TrainConfig, data.get("train", {}), {})
    acq = _build_section(
        "acquisition", AcquisitionConfig, data.get("acquisition", {}),
        {"noise_std": train.noise_std})
    model = _build_section(
        "model", ModelConfig, data.get("model", {}),
        {"n_r": grid.n_r, "n_gamma": grid.n_gamma})
    policy = _build_section(
        "policy", PolicyConfig, data.get("policy", {}),
        {"n_lines": acq.n_lines,
         "n_posterior_samples": acq.n_posterior_samples,
         "noise_std": train.noise_std})
    dataset = _build_section("data", DataConfig, data.get("data", {}), {})
    phantom = _build_section("phantom", PhantomConfig, data.get("phantom", {}), {})
    return Config(grid=grid, model=model, train=train, policy=policy,
                  acquisition=acq, data=dataset, phantom=phantom)


def load_config(path=None):
    """Load a YAML config file; None gives the library defaults."""
    if path is None:
        return config_from_dict({})
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg):
    """Plain nested dict form, as echoed into reports and manifests."""
    return {name: dataclasses.asdict(getattr(cfg, name))
            for name in _SECTIONS}
