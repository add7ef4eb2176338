"""Layered run configuration.

One RunConfig covers every component: crystal physics, coupling stage,
reward shaping, MDP step scaling, heuristic search, agent
hyperparameters, and evaluation campaign settings.  Sources merge with
increasing precedence:

    built-in defaults < YAML file < --set key.path=value < environment

Environment overrides use the prefix QALIGN_ with a double underscore
between block and key, e.g. ``QALIGN_SAC__GAMMA=0.0003`` sets
``sac.gamma``.  Unknown blocks or keys are rejected outright; a typo'd
override never silently does nothing.  Values in --set and environment
strings are parsed as YAML scalars, so ``null``, ``true``, numbers, and
lists all work.

The fully resolved configuration is serializable back to YAML
(``to_yaml``) and is written next to every command's outputs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from typing import Any, Mapping, Optional, Sequence

import yaml

from qalign.env import CouplingModel, MdpConfig, RewardConfig
from qalign.errors import ConfigError
from qalign.heuristic import HeuristicConfig
from qalign.sac import SacConfig
from qalign.spdc import CrystalConfig, DEFAULT_GRID_POINTS

__all__ = [
    "CrystalBlock",
    "EvalBlock",
    "RunConfig",
    "default_config",
    "from_dict",
    "load_config",
    "to_yaml",
    "write_resolved",
    "ENV_PREFIX",
]

ENV_PREFIX = "QALIGN_"


@dataclass(frozen=True)
class CrystalBlock:
    """Crystal parameters plus the temperature-scan grid."""

    poling_period_um: float = 19.388
    crystal_length_mm: float = 10.0
    pump_wavelength_nm: float = 775.0
    temperature_c: float = 25.0
    pump_power_rel: float = 1.0
    sweep_t_min_c: float = 10.0
    sweep_t_max_c: float = 80.0
    sweep_steps: int = 141
    grid_points: int = DEFAULT_GRID_POINTS

    def to_crystal_config(self) -> CrystalConfig:
        return CrystalConfig(
            poling_period_um=self.poling_period_um,
            crystal_length_mm=self.crystal_length_mm,
            pump_wavelength_nm=self.pump_wavelength_nm,
            temperature_c=self.temperature_c,
            pump_power_rel=self.pump_power_rel,
        )


@dataclass(frozen=True)
class EvalBlock:
    """Evaluation campaign settings."""

    trials: int = 200
    time_budget_s: float = 3600.0
    n_thresholds: int = 121

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.time_budget_s <= 0:
            raise ValueError("time_budget_s must be positive")


@dataclass(frozen=True)
class RunConfig:
    """Complete resolved configuration, one field per block."""

    crystal: CrystalBlock = field(default_factory=CrystalBlock)
    coupling: CouplingModel = field(default_factory=CouplingModel)
    reward: RewardConfig = field(default_factory=RewardConfig)
    mdp: MdpConfig = field(default_factory=MdpConfig)
    heuristic: HeuristicConfig = field(default_factory=HeuristicConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    eval: EvalBlock = field(default_factory=EvalBlock)


_BLOCK_TYPES = {
    "crystal": CrystalBlock,
    "coupling": CouplingModel,
    "reward": RewardConfig,
    "mdp": MdpConfig,
    "heuristic": HeuristicConfig,
    "sac": SacConfig,
    "eval": EvalBlock,
}


def default_config() -> RunConfig:
    return RunConfig()


def _as_nested_dict(cfg: RunConfig) -> dict:
    out = {}
    for block_name, block_type in _BLOCK_TYPES.items():
        block = getattr(cfg, block_name)
        d = {}
        for f in fields(block_type):
            v = getattr(block, f.name)
            if isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        out[block_name] = d
    return out


def _check_keys(data: Mapping, source: str) -> None:
    for block_name, block_val in data.items():
        if block_name not in _BLOCK_TYPES:
            raise ConfigError(f"{source}: unknown config block {block_name!r}")
        if not isinstance(block_val, Mapping):
            raise ConfigError(f"{source}: block {block_name!r} must be a mapping")
        known = {f.name for f in fields(_BLOCK_TYPES[block_name])}
        for key in block_val:
            if key not in known:
                raise ConfigError(
                    f"{source}: unknown key {block_name}.{key!r} "
                    f"(known: {', '.join(sorted(known))})"
                )


def _coerce(block_name: str, key: str, value: Any) -> Any:
    if block_name == "sac" and key == "hidden" and isinstance(value, list):
        return tuple(value)
    return value


def _build(merged: dict) -> RunConfig:
    blocks = {}
    for block_name, block_type in _BLOCK_TYPES.items():
        kwargs = {
            k: _coerce(block_name, k, v) for k, v in merged[block_name].items()
        }
        try:
            blocks[block_name] = block_type(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid value in block {block_name!r}: {exc}") from exc
    return RunConfig(**blocks)


def _parse_scalar(text: str, context: str) -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{context}: cannot parse value {text!r}: {exc}") from exc


def _apply_dotted(merged: dict, dotted: str, raw_value: str, source: str) -> None:
    parts = dotted.split(".")
    if len(parts) != 2:
        raise ConfigError(f"{source}: expected block.key, got {dotted!r}")
    block_name, key = parts
    _check_keys({block_name: {key: None}}, source)
    merged[block_name][key] = _parse_scalar(raw_value, source)


def from_dict(data: Mapping) -> RunConfig:
    """Build a RunConfig from a (possibly partial) nested mapping laid
    over the defaults.  Same strict key checking as file loading."""
    _check_keys(data, "config dict")
    merged = _as_nested_dict(default_config())
    for block_name, block_val in data.items():
        merged[block_name].update(block_val)
    return _build(merged)


def load_config(
    path: Optional[str] = None,
    sets: Sequence[str] = (),
    env: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Resolve a RunConfig from defaults, file, --set pairs, and env vars.

    Raises ConfigError on unknown blocks/keys, malformed values, or
    values that fail a block's own validation.
    """
    merged = _as_nested_dict(default_config())

    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path!r} is not valid YAML: {exc}") from exc
        if data is None:
            data = {}
        if not isinstance(data, Mapping):
            raise ConfigError(f"config file {path!r} must contain a mapping")
        _check_keys(data, path)
        for block_name, block_val in data.items():
            merged[block_name].update(block_val)

    for pair in sets:
        if "=" not in pair:
            raise ConfigError(f"--set expects key.path=value, got {pair!r}")
        dotted, raw = pair.split("=", 1)
        _apply_dotted(merged, dotted.strip(), raw, "--set")

    env = env if env is not None else os.environ
    for name, raw in sorted(env.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):]
        if "__" not in rest:
            raise ConfigError(
                f"environment variable {name}: expected "
                f"{ENV_PREFIX}BLOCK__KEY"
            )
        block_name, key = rest.split("__", 1)
        _apply_dotted(
            merged, f"{block_name.lower()}.{key.lower()}", raw, f"env {name}"
        )

    return _build(merged)


def to_yaml(cfg: RunConfig) -> str:
    """Serialize the resolved config; load_config on the result is a
    fixed point."""
    return yaml.safe_dump(_as_nested_dict(cfg), sort_keys=False)


def write_resolved(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(to_yaml(cfg))
