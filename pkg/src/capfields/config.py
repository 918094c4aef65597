"""Flat key=value config files with typed defaults."""
from __future__ import annotations

from dataclasses import dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # dataset / scene
    frames: int = 60
    width: int = 256
    height: int = 256
    fx: float = 280.0
    fy: float = 280.0
    # synthetic motion script
    human: bool = True
    object: bool = True
    spin_turns: float = 1.0
    spin_profile: str = "uniform"   # uniform | burst
    arm_swing: float = 0.5
    arm_swing_cycles: float = 2.0
    bend_joint: int = -1
    bend_degrees: float = 0.0
    object_orbit_degrees: float = 360.0
    object_spin_degrees: float = 180.0
    texture_freq: float = 18.0
    bg_r: int = 24
    bg_g: int = 28
    bg_b: int = 34
    # tracking
    surface_samples: int = 4096
    node_radius: float = 0.05
    lm_iters: int = 8
    # key frames
    pool_capacity: int = 100
    gamma: float = 2.5
    tau_blur: float = 0.6
    selector: str = "pool"          # pool | fixed
    refine_m: int = 10
    refine_steps: int = 50
    # radiance fields / training
    knn_resolution: int = 64
    train_steps_per_frame: int = 8
    rays_per_batch: int = 1024
    samples_guided: int = 32
    samples_uniform: int = 16
    samples_empty: int = 64
    depth_sigma: float = 0.02
    t_near: float = 0.3
    t_far: float = 5.0
    lambda_depth: float = 0.1
    hash_levels: int = 16
    hash_features: int = 2
    log2_table: int = 19
    base_resolution: int = 16
    max_resolution: int = 2048
    lr_hash: float = 1e-2
    lr_net: float = 1e-3
    # pipeline
    mode: str = "full"              # full | oracle-motion | object-only
    serial: bool = True
    seed: int = 0
    queue_capacity: int = 8


_BOOL = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}


def parse_value(raw: str, kind: type):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() not in _BOOL:
            raise ConfigError(f"expected boolean, got {raw!r}")
        return _BOOL[raw.lower()]
    try:
        return kind(raw)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    known = {f.name: f.type for f in fields(RunConfig)}
    types = {f.name: type(getattr(cfg, f.name)) for f in fields(RunConfig)}
    entries: dict[str, str] = {}
    if path:
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, val = line.split("=", 1)
                entries[key.strip()] = val
    entries.update({k: str(v) for k, v in (overrides or {}).items()})
    for key, val in entries.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            setattr(cfg, key, parse_value(str(val), types[key]))
        except ConfigError as e:
            raise ConfigError(f"config key {key!r}: {e}") from e
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if cfg.frames < 1:
        raise ConfigError("config key 'frames': must be >= 1")
    if cfg.width < 16 or cfg.height < 16:
        raise ConfigError("config key 'width/height': images must be at least 16x16")
    if cfg.selector not in ("pool", "fixed"):
        raise ConfigError("config key 'selector': must be 'pool' or 'fixed'")
    if cfg.mode not in ("full", "oracle-motion", "object-only"):
        raise ConfigError("config key 'mode': must be full, oracle-motion or object-only")
    if cfg.spin_profile not in ("uniform", "burst"):
        raise ConfigError("config key 'spin_profile': must be 'uniform' or 'burst'")
    if not (cfg.human or cfg.object):
        raise ConfigError("config key 'human/object': at least one must be present")


def save_config(path: str, cfg: RunConfig) -> None:
    with open(path, "w") as f:
        for fld in fields(RunConfig):
            f.write(f"{fld.name}={getattr(cfg, fld.name)}\n")
