"""Mission configuration: flat `section.key = value` text, strict key checking.

The format is deliberately dumb: one assignment per line, `#` comments, no
nesting, no quoting. Every key is listed in the registry below; anything else
is rejected by name. Rendering a parsed config reproduces an equivalent file,
and a rendered config re-parses to an equal object, which is what makes run
headers self-describing.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace

from cone_mapper.core import ConfigurationError
from cone_mapper.physics import DEFAULT_KAPPA, DEFAULT_N_PHI, DEFAULT_N_THETA

_REQUIRED = object()

# key -> (attribute, converter, default). Converters raise ValueError on bad input.
_SCALAR_KEYS = {
    "grid.origin_x": ("origin_x", float, 0.0),
    "grid.origin_y": ("origin_y", float, 0.0),
    "grid.origin_z": ("origin_z", float, 0.0),
    "grid.extent_x": ("extent_x", float, _REQUIRED),
    "grid.extent_y": ("extent_y", float, _REQUIRED),
    "grid.resolution": ("resolution", float, _REQUIRED),
    "agents.count": ("n_agents", int, 3),
    "agents.max_speed": ("max_speed", float, 8.0),
    "agents.flight_height": ("flight_height", float, 2.0),
    "physics.mu": ("mu", float, 0.01),
    "physics.kappa": ("kappa", float, DEFAULT_KAPPA),
    "physics.table": ("table_source", str, "builtin"),
    "physics.n_phi": ("n_phi", int, DEFAULT_N_PHI),
    "physics.n_theta": ("n_theta", int, DEFAULT_N_THETA),
    "physics.table_samples": ("table_samples", int, 2000),
    "physics.table_seed": ("table_seed", int, 0),
    "recon.sigma": ("sigma", float, 0.17),
    "recon.n_iter": ("n_iter", int, 10),
    "recon.sparsity_rel": ("sparsity_rel", float, 1e-3),
    "noise.angle_noise": ("angle_noise", float, 0.17),
    "noise.p_ambiguity": ("p_ambiguity", float, 0.13),
    "noise.background_rate": ("background_rate", float, 0.25),
    "noise.beta_min": ("beta_min", float, 0.17),
    "noise.beta_max": ("beta_max", float, 1.40),
    "strategy.s_min": ("s_min", "auto_or_float", None),
    "strategy.s_max_factor": ("s_max_factor", float, 20.0),
    "strategy.k_explore": ("k_explore", int, 12),
    "strategy.replan_period": ("replan_period", float, 5.0),
    "strategy.recent_radius": ("recent_radius", float, 3.0),
    "strategy.recent_window": ("recent_window", float, 30.0),
    "run.dt": ("dt", float, 0.5),
    "run.duration": ("duration", float, 60.0),
    "run.seed": ("seed", int, 1),
    "run.strategy": ("strategy", str, "active"),
    "run.output_dir": ("output_dir", str, "out"),
    "run.zigzag_step": ("zigzag_step", float, 2.0),
}

_SOURCE_KEY = re.compile(r"^source\.(\d+)\.(x|y|activity)$")
_AGENT_KEY = re.compile(r"^agent\.(\d+)\.(start_x|start_y)$")


@dataclass(frozen=True)
class MissionConfig:
    """Fully resolved scenario description. See the module docstring for the file format."""

    extent_x: float
    extent_y: float
    resolution: float
    origin_x: float = 0.0
    origin_y: float = 0.0
    origin_z: float = 0.0
    sources: tuple[tuple[float, float, float], ...] = ()
    n_agents: int = 3
    max_speed: float = 8.0
    flight_height: float = 2.0
    agent_starts: tuple[tuple[float, float], ...] | None = None
    mu: float = 0.01
    kappa: float = DEFAULT_KAPPA
    table_source: str = "builtin"
    n_phi: int = DEFAULT_N_PHI
    n_theta: int = DEFAULT_N_THETA
    table_samples: int = 2000
    table_seed: int = 0
    sigma: float = 0.17
    n_iter: int = 10
    sparsity_rel: float = 1e-3
    angle_noise: float = 0.17
    p_ambiguity: float = 0.13
    background_rate: float = 0.25
    beta_min: float = 0.17
    beta_max: float = 1.40
    s_min: float | None = None
    s_max_factor: float = 20.0
    k_explore: int = 12
    replan_period: float = 5.0
    recent_radius: float = 3.0
    recent_window: float = 30.0
    dt: float = 0.5
    duration: float = 60.0
    seed: int = 1
    strategy: str = "active"
    output_dir: str = "out"
    zigzag_step: float = 2.0

    def __post_init__(self):
        def need(cond: bool, key: str, constraint: str):
            if not cond:
                raise ConfigurationError(f"{key}: {constraint}")

        need(self.extent_x > 0.0, "grid.extent_x", f"must be > 0, got {self.extent_x!r}")
        need(self.extent_y > 0.0, "grid.extent_y", f"must be > 0, got {self.extent_y!r}")
        need(self.resolution > 0.0, "grid.resolution", f"must be > 0, got {self.resolution!r}")
        need(self.n_agents >= 1, "agents.count", f"must be >= 1, got {self.n_agents!r}")
        need(self.max_speed > 0.0, "agents.max_speed", f"must be > 0, got {self.max_speed!r}")
        need(
            self.flight_height > 0.0,
            "agents.flight_height",
            f"must be > 0, got {self.flight_height!r}",
        )
        for i, (x, y, act) in enumerate(self.sources, start=1):
            need(act > 0.0, f"source.{i}.activity", f"must be > 0, got {act!r}")
        if self.agent_starts is not None:
            need(
                len(self.agent_starts) == self.n_agents,
                "agent.<i>.start_x/start_y",
                f"got starts for {len(self.agent_starts)} agents but agents.count = {self.n_agents}",
            )
        need(self.mu >= 0.0, "physics.mu", f"must be >= 0, got {self.mu!r}")
        need(self.kappa > 0.0, "physics.kappa", f"must be > 0, got {self.kappa!r}")
        need(self.n_phi >= 1, "physics.n_phi", f"must be >= 1, got {self.n_phi!r}")
        need(self.n_theta >= 1, "physics.n_theta", f"must be >= 1, got {self.n_theta!r}")
        need(
            self.table_samples >= 1,
            "physics.table_samples",
            f"must be >= 1, got {self.table_samples!r}",
        )
        need(self.sigma > 0.0, "recon.sigma", f"must be > 0, got {self.sigma!r}")
        need(self.n_iter >= 1, "recon.n_iter", f"must be >= 1, got {self.n_iter!r}")
        need(
            self.sparsity_rel >= 0.0,
            "recon.sparsity_rel",
            f"must be >= 0, got {self.sparsity_rel!r}",
        )
        need(self.angle_noise >= 0.0, "noise.angle_noise", f"must be >= 0, got {self.angle_noise!r}")
        need(
            0.0 <= self.p_ambiguity <= 1.0,
            "noise.p_ambiguity",
            f"must lie in [0, 1], got {self.p_ambiguity!r}",
        )
        need(
            self.background_rate >= 0.0,
            "noise.background_rate",
            f"must be >= 0, got {self.background_rate!r}",
        )
        need(
            0.0 < self.beta_min < self.beta_max < math.pi,
            "noise.beta_min/beta_max",
            f"need 0 < beta_min < beta_max < pi, got ({self.beta_min!r}, {self.beta_max!r})",
        )
        if self.s_min is not None:
            need(self.s_min > 0.0, "strategy.s_min", f"must be > 0 or 'auto', got {self.s_min!r}")
        need(
            self.s_max_factor >= 1.0,
            "strategy.s_max_factor",
            f"must be >= 1, got {self.s_max_factor!r}",
        )
        need(self.k_explore >= 1, "strategy.k_explore", f"must be >= 1, got {self.k_explore!r}")
        need(
            self.recent_radius >= 0.0,
            "strategy.recent_radius",
            f"must be >= 0, got {self.recent_radius!r}",
        )
        need(
            self.recent_window >= 0.0,
            "strategy.recent_window",
            f"must be >= 0, got {self.recent_window!r}",
        )
        need(self.dt > 0.0, "run.dt", f"must be > 0, got {self.dt!r}")
        need(
            self.replan_period > 0.0,
            "strategy.replan_period",
            f"must be > 0, got {self.replan_period!r}",
        )
        ratio = self.replan_period / self.dt
        need(
            abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1,
            "strategy.replan_period",
            f"must be a whole multiple of run.dt, got {self.replan_period!r} vs dt {self.dt!r}",
        )
        need(self.duration >= 0.0, "run.duration", f"must be >= 0, got {self.duration!r}")
        need(self.seed >= 0, "run.seed", f"must be >= 0, got {self.seed!r}")
        need(
            self.strategy in ("active", "zigzag"),
            "run.strategy",
            f"must be 'active' or 'zigzag', got {self.strategy!r}",
        )
        need(self.zigzag_step > 0.0, "run.zigzag_step", f"must be > 0, got {self.zigzag_step!r}")


def parse_config(text: str) -> MissionConfig:
    """Parse config text; unknown, duplicate, malformed or missing keys all raise."""
    entries: dict[str, tuple[int, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in entries:
            raise ConfigurationError(f"line {lineno}: duplicate key '{key}'")
        entries[key] = (lineno, value)

    kwargs = {}
    source_raw: dict[int, dict[str, float]] = {}
    agent_raw: dict[int, dict[str, float]] = {}
    for key, (lineno, value) in entries.items():
        if key in _SCALAR_KEYS:
            attr, conv, _ = _SCALAR_KEYS[key]
            try:
                if conv == "auto_or_float":
                    kwargs[attr] = None if value == "auto" else float(value)
                else:
                    kwargs[attr] = conv(value)
            except ValueError as exc:
                raise ConfigurationError(f"line {lineno}: {key}: bad value {value!r}") from exc
            continue
        m = _SOURCE_KEY.match(key)
        if m:
            try:
                source_raw.setdefault(int(m.group(1)), {})[m.group(2)] = float(value)
            except ValueError as exc:
                raise ConfigurationError(f"line {lineno}: {key}: bad value {value!r}") from exc
            continue
        m = _AGENT_KEY.match(key)
        if m:
            try:
                agent_raw.setdefault(int(m.group(1)), {})[m.group(2)] = float(value)
            except ValueError as exc:
                raise ConfigurationError(f"line {lineno}: {key}: bad value {value!r}") from exc
            continue
        raise ConfigurationError(f"line {lineno}: unknown key '{key}'")

    for key, (attr, _, default) in _SCALAR_KEYS.items():
        if attr not in kwargs:
            if default is _REQUIRED:
                raise ConfigurationError(f"missing required key '{key}'")
            kwargs[attr] = default

    if source_raw:
        indices = sorted(source_raw)
        if indices != list(range(1, len(indices) + 1)):
            raise ConfigurationError(
                f"source indices must be consecutive from 1, got {indices}"
            )
        sources = []
        for i in indices:
            parts = source_raw[i]
            for part in ("x", "y", "activity"):
                if part not in parts:
                    raise ConfigurationError(f"missing required key 'source.{i}.{part}'")
            sources.append((parts["x"], parts["y"], parts["activity"]))
        kwargs["sources"] = tuple(sources)

    if agent_raw:
        indices = sorted(agent_raw)
        n = kwargs["n_agents"]
        if indices != list(range(1, n + 1)):
            raise ConfigurationError(
                f"agent start indices must cover 1..{n} (agents.count), got {indices}"
            )
        starts = []
        for i in indices:
            parts = agent_raw[i]
            for part in ("start_x", "start_y"):
                if part not in parts:
                    raise ConfigurationError(f"missing required key 'agent.{i}.{part}'")
            starts.append((parts["start_x"], parts["start_y"]))
        kwargs["agent_starts"] = tuple(starts)

    return MissionConfig(**kwargs)


def load_config(path) -> MissionConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def _render_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(cfg: MissionConfig) -> str:
    """Config text that parses back to an equal MissionConfig."""
    lines = ["# mission configuration (all keys resolved)"]
    for key, (attr, conv, _) in _SCALAR_KEYS.items():
        value = getattr(cfg, attr)
        if conv == "auto_or_float":
            lines.append(f"{key} = {'auto' if value is None else repr(value)}")
        else:
            lines.append(f"{key} = {_render_value(value)}")
    for i, (x, y, act) in enumerate(cfg.sources, start=1):
        lines.append(f"source.{i}.x = {repr(x)}")
        lines.append(f"source.{i}.y = {repr(y)}")
        lines.append(f"source.{i}.activity = {repr(act)}")
    if cfg.agent_starts is not None:
        for i, (x, y) in enumerate(cfg.agent_starts, start=1):
            lines.append(f"agent.{i}.start_x = {repr(x)}")
            lines.append(f"agent.{i}.start_y = {repr(y)}")
    return "\n".join(lines) + "\n"


def resolve(cfg: MissionConfig, s_min: float, agent_starts: tuple[tuple[float, float], ...]) -> MissionConfig:
    """Copy of the config with auto values pinned to their computed numbers."""
    out = cfg
    if out.s_min is None:
        out = replace(out, s_min=float(s_min))
    if out.agent_starts is None:
        out = replace(out, agent_starts=tuple(agent_starts))
    return out


def config_fields() -> list[str]:
    """All scalar config keys, for docs and error hints."""
    return list(_SCALAR_KEYS)
