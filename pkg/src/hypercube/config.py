"""Flat ``key = value`` configuration file.

Lookup order for the file: an explicit path, then ``$HYPERCUBE_CONF``, then
``./hypercube.conf`` if present. Values from the file override built-in
defaults; command-line flags override both. Lines starting with ``#`` are
comments. Unknown keys are errors.
"""

from __future__ import annotations

import os
from pathlib import Path

from .optimizer import OptConfig

ENV_VAR = "HYPERCUBE_CONF"
DEFAULT_NAME = "hypercube.conf"


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _schedule(s: str) -> tuple[tuple[float, int], ...]:
    """``"10:3000,100:3000"`` -> ``((10.0, 3000), (100.0, 3000))``."""
    out = []
    for part in s.split(","):
        mu, steps = part.split(":")
        out.append((float(mu), int(steps)))
    return tuple(out)


# key -> (parser, OptConfig field or None for CLI-only keys)
KEYS = {
    "restarts": (int, "restarts"),
    "max_steps": (int, "max_steps"),
    "step_size": (float, "step_size"),
    "feas_tol": (float, "feas_tol"),
    "seed": (int, "seed"),
    "penalty_schedule": (_schedule, "penalty_schedule"),
    "window": (int, "window"),
    "conv_rtol": (float, "conv_rtol"),
    "polish": (_bool, "polish"),
    "polish_maxiter": (int, "polish_maxiter"),
    "workers": (int, None),
    "sample": (int, None),
    "c": (float, None),
    "sync_tol": (float, None),
}


def find_config(path: str | Path | None = None) -> Path | None:
    if path is not None:
        return Path(path)
    env = os.environ.get(ENV_VAR)
    if env:
        return Path(env)
    local = Path(DEFAULT_NAME)
    return local if local.exists() else None


def parse_config(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = KEYS[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return values


def load_config(path: str | Path | None = None) -> dict:
    """Parsed settings from the config file, or ``{}`` when there is none."""
    found = find_config(path)
    if found is None:
        return {}
    try:
        text = found.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {found}: {exc}") from None
    return parse_config(text, str(found))


def opt_config(file_values: dict, overrides: dict | None = None) -> OptConfig:
    """``OptConfig`` from defaults, then file values, then non-None overrides."""
    kwargs = {KEYS[k][1]: v for k, v in file_values.items() if KEYS[k][1] is not None}
    for k, v in (overrides or {}).items():
        if v is not None:
            kwargs[k] = v
    try:
        return OptConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid optimizer settings: {exc}") from None


def setting(name: str, flag_value, file_values: dict, default):
    """Resolve one CLI-only setting by precedence: flag, file, default."""
    if flag_value is not None:
        return flag_value
    return file_values.get(name, default)
