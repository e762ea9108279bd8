"""Flat ``key = value`` experiment configs and shipped presets.

Lines are ``key = value``; ``#`` starts a comment. Dotted keys group related
settings (``cost.a.low``, ``sweep.betas``). Lists are comma separated.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Mapping

from .cost import CostSpec
from .protocol import recommend_tau
from .sim import ConfigError, ExperimentConfig

PRESETS = tuple(
    f"{scale}-{fig}" for scale in ("paper", "desk") for fig in ("fig1", "fig3", "fig5", "fig6")
)

_SIMPLE = {
    "n_clients": int,
    "capacity": float,
    "steps": int,
    "mode": str,
    "master_seed": int,
    "cost_seed": int,
    "theta0": float,
    "theta_min": float,
    "theta_max": float,
    "trace_thinning": int,
    "baseline": str,
    "burn_in_frac": float,
}
_EXTRA = {"tau", "beta", "p_override", "threads", "tau.x_floor", "sweep.betas", "sweep.classical",
          "cost.families", "cost.a.low", "cost.a.high", "cost.b.low", "cost.b.high"}


@dataclass
class RunSpec:
    """An experiment config plus the CLI-level settings around it."""

    experiment: ExperimentConfig
    sweep_betas: tuple[float, ...] = ()
    sweep_classical: bool = False
    x_floor: float = 0.05
    tau_source: str = "configured"
    raw: dict[str, str] = field(default_factory=dict)

    def population(self) -> list[CostSpec]:
        return self.experiment.population()


def parse_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def parse_overrides(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("fedselect.presets").joinpath(f"{name}.cfg").read_text()


def _floats(value: str) -> tuple[float, ...]:
    return tuple(float(v) for v in value.split(",") if v.strip())


def _bool(value: str) -> bool:
    v = value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def build(raw: Mapping[str, str]) -> RunSpec:
    unknown = set(raw) - set(_SIMPLE) - _EXTRA
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    kw: dict = {}
    try:
        for key, conv in _SIMPLE.items():
            if key in raw:
                kw[key] = conv(raw[key])
        if "beta" in raw:
            betas = _floats(raw["beta"])
            kw["beta"] = betas[0] if len(betas) == 1 else betas
        if raw.get("p_override", "none").lower() != "none":
            kw["p_override"] = float(raw["p_override"])
        if "threads" in raw:
            kw["threads"] = int(raw["threads"])
        if "cost.families" in raw:
            kw["families"] = tuple(f.strip() for f in raw["cost.families"].split(",") if f.strip())
        defaults = ExperimentConfig()
        kw["a_range"] = (
            float(raw.get("cost.a.low", defaults.a_range[0])),
            float(raw.get("cost.a.high", defaults.a_range[1])),
        )
        kw["b_range"] = (
            float(raw.get("cost.b.low", defaults.b_range[0])),
            float(raw.get("cost.b.high", defaults.b_range[1])),
        )
        x_floor = float(raw.get("tau.x_floor", 0.05))
        tau_raw = raw.get("tau", str(defaults.tau))
        sweep_betas = _floats(raw["sweep.betas"]) if "sweep.betas" in raw else ()
        sweep_classical = _bool(raw.get("sweep.classical", "false"))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc

    spec = RunSpec(
        experiment=ExperimentConfig(**kw),
        sweep_betas=sweep_betas,
        sweep_classical=sweep_classical,
        x_floor=x_floor,
        raw=dict(raw),
    )
    if tau_raw.lower() == "auto":
        spec.experiment = replace(spec.experiment, tau=recommend_tau(spec.population(), x_floor))
        spec.tau_source = "auto"
    else:
        try:
            spec.experiment = replace(spec.experiment, tau=float(tau_raw))
        except ValueError as exc:
            raise ConfigError(f"tau: {exc}") from exc
    spec.experiment.validate()
    return spec


def load(
    path: str | Path | None = None,
    preset: str | None = None,
    overrides: Mapping[str, str] | None = None,
) -> RunSpec:
    """Merge preset, then file, then overrides (later wins)."""
    raw: dict[str, str] = {}
    if preset:
        raw.update(parse_text(preset_text(preset)))
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        raw.update(parse_text(text))
    raw.update(overrides or {})
    return build(raw)


def config_dict(cfg: ExperimentConfig) -> dict:
    """JSON-friendly echo of an experiment config, in field order."""
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out
