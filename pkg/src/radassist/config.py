"""Service configuration: one JSON file, environment overrides, CLI flags on top."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import InvalidInputError
from .model import ModelConfig

ENV_PREFIX = "RADASSIST_"


@dataclass
class AppConfig:
    host: str = "127.0.0.1"
    port: int = 8077
    data_dir: str = "data"
    model_name: str = "lesion-detector"
    n_batch: int = 4
    t_max: float = 600.0
    sim_mode: bool = False
    strict_wire: bool = True
    users: tuple[str, ...] = ()
    frontend_dir: str = ""  # serve the workbench at /app when set
    # detector knobs, forwarded into ModelConfig
    height: int = 64
    width: int = 64
    labels: tuple[str, ...] = ("lesion-a", "lesion-b", "lesion-c")
    theta_det: float = 0.5
    tau: float = 0.5
    eta: float = 0.025
    lambda_loc: float = 1.0
    lambda_reg: float = 1e-4
    m_in: float = 0.0
    epochs_default: int = 20

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            height=self.height,
            width=self.width,
            labels=tuple(self.labels),
            theta_det=self.theta_det,
            tau=self.tau,
            eta=self.eta,
            lambda_loc=self.lambda_loc,
            lambda_reg=self.lambda_reg,
            m_in=self.m_in,
            epochs_default=self.epochs_default,
        )

    def effective_t_max(self) -> float:
        return 0.0 if self.sim_mode else self.t_max


_TUPLE_KEYS = {"labels", "users"}


def _coerce(name: str, value, target_type):
    if name in _TUPLE_KEYS:
        if isinstance(value, str):
            return tuple(part.strip() for part in value.split(",") if part.strip())
        return tuple(value)
    if target_type is bool and isinstance(value, str):
        lowered = value.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise InvalidInputError(f"cannot read {value!r} as a boolean for {name}")
    if target_type in (int, float) and not isinstance(value, bool):
        return target_type(value)
    return value


def load_config(
    path: str | Path | None = None,
    env: dict | None = None,
    overrides: dict | None = None,
) -> AppConfig:
    """Defaults, then the config file, then RADASSIST_* env vars, then overrides."""
    values: dict = {}
    known = {f.name: f.type for f in fields(AppConfig)}
    types = {f.name: type(getattr(AppConfig(), f.name)) for f in fields(AppConfig)}

    if path is not None:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        for key, value in data.items():
            if key not in known:
                raise InvalidInputError(f"unknown configuration key {key!r}")
            values[key] = _coerce(key, value, types[key])

    env = dict(os.environ if env is None else env)
    for key in known:
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            values[key] = _coerce(key, env[env_key], types[key])

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in known:
            raise InvalidInputError(f"unknown configuration key {key!r}")
        values[key] = _coerce(key, value, types[key])

    return AppConfig(**values)
