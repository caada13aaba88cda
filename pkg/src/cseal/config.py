"""Flat key=value experiment configuration with file, environment-variable,
and command-line override layers (flags win, then CSEAL_* variables, then
the config file, then defaults).
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

ENV_PREFIX = "CSEAL_"


@dataclass
class ExperimentConfig:
    # run
    environment: str = "kss"          # kss | kes
    method: str = "cseal"             # cseal | cseal-ncn | cn-random | cog | mcs-10 | mcs-50
    seed: int = 0
    out: str = "out"
    episodes: int = 500
    jobs: int = 1
    lengths: str = "5,10,20,30,40"
    # artifacts
    graph: str = ""                   # edge-list path; empty -> built-in 10-item graph
    dataset: str = ""                 # session file (training data / KES episode source)
    dkt_ckpt: str = ""
    agent_ckpt: str = ""
    env_model_ckpt: str = ""          # KES environment tracing model
    output: str = ""                  # gen-data target file
    # data generation
    sessions: int = 4000
    max_len: int = 50
    # rule-based simulator
    g_max: float = 0.3
    tau: float = 0.6
    skip_threshold: float = 0.9
    irt_a: float = 1.0
    irt_c: float = 0.1
    init_upper: float = 0.6
    irt_params: str = ""              # optional per-item override CSV: item,a,b,c
    # knowledge tracing
    kt_embed_dim: int = 15
    kt_hidden_dim: int = 20
    kt_lr: float = 1e-3
    kt_batch: int = 16
    kt_epochs: int = 50
    kt_patience: int = 3
    kt_dropout_embed: float = 0.2
    kt_dropout_output: float = 0.5
    kt_clip: float = 5.0
    # agent
    gamma: float = 0.99
    alpha: float = 1.0
    beta: float = 0.1
    path_length: int = 20
    agent_lr: float = 1e-4
    agent_epochs: int = 300
    agent_batch: int = 16
    entropy_weight: float = 0.0
    hidden1: int = 128
    hidden2: int = 32
    k: int = 2
    agent_clip: float = 5.0
    eval_mode: str = "sample"         # sample | argmax

    def lengths_list(self) -> list[int]:
        return [int(x) for x in str(self.lengths).split(",") if x.strip()]


_FIELDS = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


class ConfigError(ValueError):
    pass


def _coerce(name: str, value: str):
    kind = _FIELDS[name]
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        return str(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name!r}: {value!r}") from exc


def parse_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def env_overrides(environ=None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    values = {}
    for name in _FIELDS:
        var = ENV_PREFIX + name.upper()
        if var in environ:
            values[name] = environ[var]
    return values


def resolve_config(file_path: str | None = None,
                   overrides: dict[str, str] | None = None,
                   flag_values: dict[str, object] | None = None,
                   environ=None) -> ExperimentConfig:
    """Layered resolution: defaults <- config file <- CSEAL_* env <- --set
    pairs <- explicit flags (only flags actually supplied override)."""
    cfg = ExperimentConfig()
    layers: list[dict] = []
    if file_path:
        layers.append(parse_config_file(file_path))
    layers.append(env_overrides(environ))
    if overrides:
        layers.append(dict(overrides))
    for layer in layers:
        for key, value in layer.items():
            if key not in _FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, _coerce(key, str(value)))
    for key, value in (flag_values or {}).items():
        if value is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, str(value)))
    return cfg


def config_header_lines(cfg: ExperimentConfig) -> list[str]:
    """The resolved configuration as sorted key=value lines (file headers)."""
    return [f"{name}={getattr(cfg, name)}" for name in sorted(_FIELDS)]
