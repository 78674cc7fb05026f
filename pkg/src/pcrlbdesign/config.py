"""Flat key-value run configuration with scale presets.

Format: one ``section.key = value`` pair per line, ``#`` starts a comment.
Presets resolve before explicit keys, so a file can select the full scale
and still pin individual sizes. The documented schema is the ``KEYS`` table
below; anything else is rejected by name.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .exceptions import ConfigError
from .models import available_models
from .pcrlb import PHI_FUNCTIONS
from .policy import TEMPLATE_NAMES

PRESETS = {
    "desk": {"n_steps": 50, "m_samples": 500, "m_inputs": 500, "runs": 100},
    "full": {"n_steps": 100, "m_samples": 2000, "m_inputs": 2000, "runs": 500},
}

# validation ground truth for built-in models; anything else must set
# validate.theta_star explicitly
TRUE_THETA = {"benchmark": (0.8, 0.7, 0.6, 0.5)}


@dataclass(frozen=True)
class RunConfig:
    """One experiment run, defaults at desk scale."""

    model: str = "benchmark"
    cases: tuple[str, ...] = ("case1", "case2", "case3", "case4")
    preset: str = "desk"
    seed: int = 0
    output_dir: str = "runs"
    threads: int = 0  # 0 keeps the backend's own default
    n_steps: int = 50
    m_samples: int = 500
    m_inputs: int = 500
    phi: str = "trace"
    n_levels: int = 2
    memory: int = 0
    u_min: float = -0.8
    u_max: float = 0.8
    runs: int = 100
    theta_star: tuple[float, ...] | None = None
    particles: int = 1000
    bound_case: str | None = None
    bound_params: tuple[float, ...] = ()
    bound_policy_file: str | None = None


def _parse_int(key: str, raw: str, minimum: int) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {raw!r}") from None
    if value < minimum:
        kind = "a positive" if minimum > 0 else "a non-negative"
        raise ConfigError(f"{key} must be {kind} integer, got {value}")
    return value


def _parse_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {raw!r}") from None


def _parse_float_tuple(key: str, raw: str) -> tuple[float, ...]:
    if not raw:
        return ()
    return tuple(_parse_float(key, part.strip()) for part in raw.split(","))


def _parse_cases(key: str, raw: str) -> tuple[str, ...]:
    names = tuple(part.strip().lower() for part in raw.split(",") if part.strip())
    if not names:
        raise ConfigError(f"{key} must name at least one case")
    for name in names:
        if name not in TEMPLATE_NAMES:
            raise ConfigError(
                f"{key}: unknown case {name!r} (choose from {', '.join(TEMPLATE_NAMES)})"
            )
    return names


def _parse_case(key: str, raw: str) -> str:
    return _parse_cases(key, raw)[0]


def _parse_preset(key: str, raw: str) -> str:
    name = raw.strip().lower()
    if name not in PRESETS:
        raise ConfigError(f"{key} must be one of {', '.join(sorted(PRESETS))}, got {raw!r}")
    return name


def _parse_phi(key: str, raw: str) -> str:
    name = raw.strip().lower()
    if name not in PHI_FUNCTIONS:
        raise ConfigError(
            f"{key} must be one of {', '.join(sorted(PHI_FUNCTIONS))}, got {raw!r}"
        )
    return name


def _parse_str(key: str, raw: str) -> str:
    if not raw:
        raise ConfigError(f"{key} must not be empty")
    return raw


_U64_MAX = 2**64 - 1

# key -> (RunConfig field, parser). design.N / design.M / design.M_u keep the
# short experiment-variable names so validation messages name them directly.
KEYS = {
    "run.model": ("model", _parse_str),
    "run.cases": ("cases", _parse_cases),
    "run.preset": ("preset", _parse_preset),
    "run.seed": ("seed", lambda k, r: _parse_int(k, r, 0)),
    "run.output_dir": ("output_dir", _parse_str),
    "run.threads": ("threads", lambda k, r: _parse_int(k, r, 0)),
    "design.N": ("n_steps", lambda k, r: _parse_int(k, r, 1)),
    "design.M": ("m_samples", lambda k, r: _parse_int(k, r, 1)),
    "design.M_u": ("m_inputs", lambda k, r: _parse_int(k, r, 1)),
    "design.phi": ("phi", _parse_phi),
    "space.b": ("n_levels", lambda k, r: _parse_int(k, r, 2)),
    "space.k": ("memory", lambda k, r: _parse_int(k, r, 0)),
    "space.u_min": ("u_min", _parse_float),
    "space.u_max": ("u_max", _parse_float),
    "validate.runs": ("runs", lambda k, r: _parse_int(k, r, 2)),
    "validate.theta_star": ("theta_star", _parse_float_tuple),
    "validate.particles": ("particles", lambda k, r: _parse_int(k, r, 100)),
    "bound.case": ("bound_case", _parse_case),
    "bound.params": ("bound_params", _parse_float_tuple),
    "bound.policy_file": ("bound_policy_file", _parse_str),
}


def validate_config(config: RunConfig) -> RunConfig:
    """Cross-field checks; raises ConfigError naming the offending key."""
    if config.model not in available_models():
        raise ConfigError(
            f"run.model: unknown model {config.model!r} "
            f"(registered: {', '.join(available_models())})"
        )
    if config.seed > _U64_MAX:
        raise ConfigError(f"run.seed must fit in 64 bits, got {config.seed}")
    if not config.u_min < config.u_max:
        raise ConfigError(
            f"space.u_min ({config.u_min!r}) must be below space.u_max ({config.u_max!r})"
        )
    if config.m_samples < 2:
        raise ConfigError(f"design.M must be at least 2, got {config.m_samples}")
    return config


def parse_config(path) -> RunConfig:
    """Read and validate a config file; unknown or duplicate keys are errors."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None

    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in pairs:
            raise ConfigError(f"{path}:{lineno}: duplicate config key {key!r}")
        pairs[key] = raw

    values = {f.name: f.default for f in fields(RunConfig)}
    preset = _parse_preset("run.preset", pairs.pop("run.preset", "desk"))
    values["preset"] = preset
    values.update(PRESETS[preset])
    for key, raw in pairs.items():
        field_name, parser = KEYS[key]
        values[field_name] = parser(key, raw)
    return validate_config(RunConfig(**values))


def with_preset(config: RunConfig, name: str) -> RunConfig:
    """Re-apply a scale preset wholesale (the --preset flag wins over the file)."""
    preset = _parse_preset("run.preset", name)
    return replace(config, preset=preset, **PRESETS[preset])


def config_digest(config: RunConfig) -> str:
    """Short hash of the experiment-relevant fields, for CSV metadata lines.

    Output location and thread count are excluded: artifact bytes must be a
    function of (experiment, seed) only.
    """
    parts = []
    for field in fields(RunConfig):
        if field.name in ("output_dir", "threads"):
            continue
        parts.append(f"{field.name}={getattr(config, field.name)!r}")
    return hashlib.sha256("\n".join(parts).encode()).hexdigest()[:12]
