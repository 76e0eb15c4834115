"""Plain-text experiment configuration.

Files hold `key = value` lines with dotted section keys, full-line or
trailing `#` comments, and a mandatory `schema_version` key. Unknown keys
are hard errors: a typo in an experiment config must fail loudly, not
silently run a different experiment.

Angles are configured in degrees (keys carry a `_deg` suffix) and converted
to radians at build time.
"""

from __future__ import annotations

import hashlib
import math
import os
from typing import Optional

import numpy as np

from .magmap import (
    GridGeometry,
    MagMap,
    MapError,
    SyntheticMapSpec,
    generate_synthetic,
    load_map,
)
from .models import MotionNoise, Pose, SensorNoise
from .planner import ActionSet, EerParams, Goal, PlannerWeights
from .simloop import EpisodeConfig

SCHEMA_VERSION = 1


class ConfigError(Exception):
    """A config file is malformed, has unknown keys, or fails validation."""


# Every key the schema admits. Values document the expected type.
KNOWN_KEYS: dict[str, str] = {
    "schema_version": "int",
    "map.file": "path",
    "map.origin_x": "float",
    "map.origin_y": "float",
    "map.cell_size": "float",
    "map.width": "int",
    "map.height": "int",
    "map.base_field": "float",
    "map.peak_center_x": "float",
    "map.peak_center_y": "float",
    "map.peak_amplitude": "float",
    "map.peak_sigma_x": "float",
    "map.peak_sigma_y": "float",
    "start.x": "float",
    "start.y": "float",
    "start.theta_deg": "float",
    "goal.x": "float",
    "goal.y": "float",
    "goal.arrival_radius": "float",
    "planner.w_h": "float",
    "planner.w_d": "float",
    "planner.alpha": "float",
    "planner.distance_mode": "str",
    "actions.v": "float",
    "actions.omegas_deg": "float_list",
    "eer.m_count": "int",
    "eer.horizon_steps": "int",
    "filter.n_particles": "int",
    "filter.resample_threshold": "float",
    "filter.prior_sigma_x": "float",
    "filter.prior_sigma_y": "float",
    "filter.prior_sigma_theta_deg": "float",
    "noise.motion_sigma_x": "float",
    "noise.motion_sigma_y": "float",
    "noise.motion_sigma_theta_deg": "float",
    "noise.sensor_sigma_z": "float",
    "sim.dt": "float",
    "sim.step_budget": "int",
    "sim.seed": "int",
    "sweep.w_h_values": "float_list",
    "sweep.seeds": "int_list",
}

_SYNTH_KEYS = (
    "map.origin_x", "map.origin_y", "map.cell_size", "map.width", "map.height",
    "map.base_field", "map.peak_center_x", "map.peak_center_y",
    "map.peak_amplitude", "map.peak_sigma_x", "map.peak_sigma_y",
)


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key -> value strings; syntax, duplicate, and unknown-key checks."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    if "schema_version" not in out:
        raise ConfigError("missing required key 'schema_version'")
    if out["schema_version"] != str(SCHEMA_VERSION):
        raise ConfigError(
            f"unsupported schema_version {out['schema_version']!r}, "
            f"this build reads version {SCHEMA_VERSION}"
        )
    return out


def load_config(path: str) -> dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def canonical_text(cfg: dict[str, str]) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def config_hash(cfg: dict[str, str]) -> str:
    return hashlib.sha256(canonical_text(cfg).encode("ascii", "replace")).hexdigest()[:16]


_MISSING = object()


def _get(cfg: dict[str, str], key: str, kind: str, default=_MISSING):
    if key not in cfg:
        if default is _MISSING:
            raise ConfigError(f"missing required key {key!r}")
        return default
    raw = cfg[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "float_list":
            return [float(v) for v in raw.split(",") if v.strip() != ""]
        if kind == "int_list":
            return [int(v) for v in raw.split(",") if v.strip() != ""]
        return raw
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: bad {kind} value {raw!r}") from exc


def build_synthetic_map(cfg: dict[str, str]) -> MagMap:
    missing = [k for k in _SYNTH_KEYS if k not in cfg]
    if missing:
        raise ConfigError(f"synthetic map needs keys: {', '.join(missing)}")
    try:
        spec = SyntheticMapSpec(
            base_field=_get(cfg, "map.base_field", "float"),
            peak_center=(
                _get(cfg, "map.peak_center_x", "float"),
                _get(cfg, "map.peak_center_y", "float"),
            ),
            peak_amplitude=_get(cfg, "map.peak_amplitude", "float"),
            peak_sigma=(
                _get(cfg, "map.peak_sigma_x", "float"),
                _get(cfg, "map.peak_sigma_y", "float"),
            ),
        )
        geometry = GridGeometry(
            origin=(_get(cfg, "map.origin_x", "float"), _get(cfg, "map.origin_y", "float")),
            cell_size=_get(cfg, "map.cell_size", "float"),
            width=_get(cfg, "map.width", "int"),
            height=_get(cfg, "map.height", "int"),
        )
    except MapError as exc:
        raise ConfigError(f"invalid map spec: {exc}") from exc
    return generate_synthetic(spec, geometry)


def build_map(cfg: dict[str, str], base_dir: str) -> MagMap:
    """map.file wins when present; otherwise the synthetic spec keys apply."""
    if "map.file" in cfg:
        path = cfg["map.file"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        try:
            return load_map(path)
        except (MapError, OSError) as exc:
            raise ConfigError(f"cannot load map.file {path}: {exc}") from exc
    return build_synthetic_map(cfg)


def build_episode_config(
    cfg: dict[str, str], base_dir: str, seed_override: Optional[int] = None
) -> EpisodeConfig:
    """Resolve a full episode configuration; --seed overrides sim.seed."""
    grid = build_map(cfg, base_dir)
    start = Pose(
        _get(cfg, "start.x", "float"),
        _get(cfg, "start.y", "float"),
        math.radians(_get(cfg, "start.theta_deg", "float")),
    )
    goal = Goal(
        (_get(cfg, "goal.x", "float"), _get(cfg, "goal.y", "float")),
        _get(cfg, "goal.arrival_radius", "float", 0.1),
    )
    weights = PlannerWeights(
        w_h=_get(cfg, "planner.w_h", "float"),
        w_d=_get(cfg, "planner.w_d", "float"),
        alpha=_get(cfg, "planner.alpha", "float"),
    )
    omegas = _get(cfg, "actions.omegas_deg", "float_list")
    if not omegas:
        raise ConfigError("actions.omegas_deg must list at least one turn rate")
    actions = ActionSet.from_turn_rates(
        _get(cfg, "actions.v", "float"), [math.radians(w) for w in omegas]
    )
    motion = MotionNoise(
        sigma_x=_get(cfg, "noise.motion_sigma_x", "float"),
        sigma_y=_get(cfg, "noise.motion_sigma_y", "float"),
        sigma_theta=math.radians(_get(cfg, "noise.motion_sigma_theta_deg", "float")),
    )
    sensor = SensorNoise(_get(cfg, "noise.sensor_sigma_z", "float"))
    prior = np.diag(
        [
            _get(cfg, "filter.prior_sigma_x", "float", 0.1) ** 2,
            _get(cfg, "filter.prior_sigma_y", "float", 0.1) ** 2,
            math.radians(_get(cfg, "filter.prior_sigma_theta_deg", "float", 5.0)) ** 2,
        ]
    )
    seed = seed_override if seed_override is not None else _get(cfg, "sim.seed", "int")
    try:
        return EpisodeConfig(
            grid=grid,
            start=start,
            goal=goal,
            weights=weights,
            actions=actions,
            motion=motion,
            sensor=sensor,
            prior_cov=prior,
            n_particles=_get(cfg, "filter.n_particles", "int"),
            eer_params=EerParams(
                m_count=_get(cfg, "eer.m_count", "int"),
                horizon_steps=_get(cfg, "eer.horizon_steps", "int"),
            ),
            dt=_get(cfg, "sim.dt", "float"),
            step_budget=_get(cfg, "sim.step_budget", "int"),
            seed=int(seed),
            resample_threshold=_get(cfg, "filter.resample_threshold", "float", None),
            distance_mode=_get(cfg, "planner.distance_mode", "str", "mean_pose"),
        )
    except Exception as exc:
        raise ConfigError(f"invalid episode configuration: {exc}") from exc


def sweep_params(cfg: dict[str, str]) -> tuple[list[float], list[int]]:
    w_h_values = _get(cfg, "sweep.w_h_values", "float_list")
    seeds = _get(cfg, "sweep.seeds", "int_list")
    if not w_h_values or not seeds:
        raise ConfigError("sweep.w_h_values and sweep.seeds must be nonempty")
    return w_h_values, seeds
