"""JSON run configuration: model description shared by the CLI commands."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .kernels import Kernel, kernel_from_spec
from .laws import law_from_spec

ALLOWED_KEYS = {"kernel", "initial", "N", "lambda", "T"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    kernel: Kernel
    initial: object
    N: int | None = None
    lam: float = 1.0
    T: float | None = None
    raw: dict | None = None

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ConfigError(f"config is missing {', '.join(missing)}")


def parse_config(obj: dict) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    extra = set(obj) - ALLOWED_KEYS
    if extra:
        raise ConfigError(f"unknown config keys {sorted(extra)}; allowed: {sorted(ALLOWED_KEYS)}")
    for key in ("kernel", "initial"):
        if key not in obj:
            raise ConfigError(f"config needs a '{key}' object")
    try:
        kernel = kernel_from_spec(obj["kernel"])
        initial = law_from_spec(obj["initial"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed kernel or initial law: {exc}") from exc
    N = obj.get("N")
    if N is not None and (int(N) != N or N < kernel.m):
        raise ConfigError(f"N must be an integer >= m = {kernel.m}")
    lam = float(obj.get("lambda", 1.0))
    if lam <= 0:
        raise ConfigError("lambda must be positive")
    T = obj.get("T")
    if T is not None and T < 0:
        raise ConfigError("T must be non-negative")
    return RunConfig(kernel, initial, None if N is None else int(N), lam,
                     None if T is None else float(T), obj)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return parse_config(obj)
