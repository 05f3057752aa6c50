"""Experiment configuration: one YAML file, strictly parsed into dataclasses.

Unknown sections or keys are rejected with the offending line number. The
config hash is the sha256 of the canonical JSON form of the resolved config
and is stamped into every artifact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any

import yaml

from .collect import RolloutConfig
from .condex import ConvSpec, IGMLConfig, NetConfig, TrainConfig
from .errors import ConfigError
from .evaluate import BenchmarkConfig
from .physics import PhysicsParams
from .render import RenderConfig


@dataclass(frozen=True)
class DatasetSection:
    categories: tuple[int, ...] = tuple(range(10))
    instances: int = 210
    seed: int = 0
    cross_categories: tuple[int, ...] = (8, 9)
    holdout_fraction: float = 0.05
    flip_fraction: float = 0.5
    canonical: bool = True


@dataclass(frozen=True)
class PhysicsSection:
    # a number, or "auto" to use the output of the calibrate subcommand
    clamp_force: Any = "auto"
    gravity: float = 9.81
    torque_coeff: float = 0.5
    jaw_face_length: float = 0.03
    max_jaw_opening: float = 0.12
    contact_depth: float = 0.004


@dataclass(frozen=True)
class RenderSection:
    resolution: float = 0.0025
    camera_height: float = 0.70
    image_px: int = 128
    interpolation: str = "bilinear"
    patch_size: int = 64


@dataclass(frozen=True)
class CollectSection:
    grasps_per_object: int = 30
    jaw_opening: float = 0.12
    descent_offset: float = 0.005
    random_yaw: bool = True
    seed: int = 0
    objects_per_shard: int = 100


@dataclass(frozen=True)
class CalibrateSection:
    target_rate: float = 0.427
    tolerance: float = 0.08
    sample_objects: int = 500
    bounds: tuple[float, float] = (1.0, 2000.0)


@dataclass(frozen=True)
class NetSection:
    conv: tuple[dict, ...] = ({"kernel": 4, "filters": 16, "stride": 2, "pool": False},
                              {"kernel": 3, "filters": 16, "stride": 1, "pool": True})
    hidden: int = 64
    r_dim: int = 32
    aggregator: str = "mean"
    input_pool: int = 2
    share_trunk: bool = False
    patch_scale: float = 30.0
    z_scale: float = 20.0
    label_scale: float = 1.0


@dataclass(frozen=True)
class TrainingSection:
    T: int = 16
    M: int = 8
    k_interval: tuple[int, int] = (1, 15)
    lr: float = 1e-3
    steps: int = 6000
    dexnet_steps: int = 6000
    igml_steps: int = 500
    adapt_steps: int = 5
    inner_lr: float = 0.05
    augmentation: bool = False
    seed: int = 0


@dataclass(frozen=True)
class EvalSection:
    k_values: tuple[int, ...] = tuple(range(21))
    targets: int = 10
    split: str = "cross"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    trials: int = 30
    candidate_pool: int = 20
    context_size: int = 15
    strategy: str = "random"
    bench_objects: int = 50


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "default"
    dataset: DatasetSection = DatasetSection()
    physics: PhysicsSection = PhysicsSection()
    render: RenderSection = RenderSection()
    collect: CollectSection = CollectSection()
    calibrate: CalibrateSection = CalibrateSection()
    net: NetSection = NetSection()
    training: TrainingSection = TrainingSection()
    eval: EvalSection = EvalSection()

    # derived objects ----------------------------------------------------
    def physics_params(self, clamp_force: float | None = None) -> PhysicsParams:
        p = self.physics
        force = clamp_force if clamp_force is not None else p.clamp_force
        if force == "auto":
            raise ConfigError("physics.clamp_force is 'auto'; resolve it from the calibrate output first")
        return PhysicsParams(float(force), p.gravity, p.torque_coeff, p.jaw_face_length, p.max_jaw_opening,
                             p.contact_depth)

    def rollout(self, clamp_force: float | None = None, patch_size: int | None = None) -> RolloutConfig:
        r, c = self.render, self.collect
        force = clamp_force if clamp_force is not None else (1.0 if self.physics.clamp_force == "auto" else None)
        return RolloutConfig(
            physics=self.physics_params(force),
            render=RenderConfig(r.resolution, r.camera_height, r.image_px, r.interpolation),
            patch_size=patch_size or r.patch_size, grasps_per_object=c.grasps_per_object,
            jaw_opening=c.jaw_opening, descent_offset=c.descent_offset, random_yaw=c.random_yaw,
        )

    def net_config(self, patch_size: int | None = None) -> NetConfig:
        """Network for ``patch_size`` pixels; a smaller field of view keeps the
        trunk input size by pooling less, so only the view changes."""
        n = self.net
        size = patch_size or self.render.patch_size
        pool = max(1, n.input_pool * size // self.render.patch_size)
        return NetConfig(conv=tuple(ConvSpec(**c) for c in n.conv), hidden=n.hidden, r_dim=n.r_dim,
                         aggregator=n.aggregator, patch_size=size,
                         input_pool=pool, share_trunk=n.share_trunk, patch_scale=n.patch_scale,
                         z_scale=n.z_scale, label_scale=n.label_scale)

    def train_config(self, steps: int | None = None, seed: int | None = None) -> TrainConfig:
        t = self.training
        return TrainConfig(steps=t.steps if steps is None else steps, tasks_per_batch=t.T, targets_per_task=t.M,
                           k_interval=tuple(t.k_interval), lr=t.lr, augment=t.augmentation,
                           seed=t.seed if seed is None else seed)

    def igml_config(self) -> IGMLConfig:
        return IGMLConfig(self.training.adapt_steps, self.training.inner_lr)

    def benchmark_config(self, strategy: str | None = None) -> BenchmarkConfig:
        e = self.eval
        return BenchmarkConfig(e.trials, e.candidate_pool, e.context_size, strategy or e.strategy)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def hash(self) -> str:
        return config_hash(self)


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# parsing


def _where(node: yaml.Node, source: str) -> str:
    return f"{source}:{node.start_mark.line + 1}"


def _convert(value, default, path: str, node: yaml.Node, source: str):
    loc = f"{path} ({_where(node, source)})"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{loc}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{loc}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{loc}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{loc}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{loc}: expected a list, got {value!r}")
        if default and isinstance(default[0], dict):
            return tuple(dict(v) for v in value)
        proto = default[0] if default else 0
        return tuple(_convert(v, proto, f"{path}[{i}]", node, source) for i, v in enumerate(value))
    return value


def _section(cls, mapping: yaml.MappingNode, data: dict, path: str, source: str):
    known = {f.name: f for f in fields(cls)}
    defaults = cls()
    kwargs = {}
    for key_node, value_node in mapping.value:
        key = key_node.value
        if key not in known:
            raise ConfigError(f"unknown key '{path}.{key}' at {_where(key_node, source)}; "
                              f"allowed: {', '.join(sorted(known))}")
        default = getattr(defaults, key)
        if is_dataclass(default):
            if not isinstance(value_node, yaml.MappingNode):
                raise ConfigError(f"section '{key}' at {_where(value_node, source)} must be a mapping")
            kwargs[key] = _section(type(default), value_node, data[key] or {}, key, source)
        elif key == "clamp_force":
            v = data[key]
            if v != "auto" and (isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0):
                raise ConfigError(f"physics.clamp_force at {_where(value_node, source)} must be > 0 or 'auto'")
            kwargs[key] = v if v == "auto" else float(v)
        else:
            kwargs[key] = _convert(data[key], default, f"{path}.{key}".lstrip("."), value_node, source)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section '{path or 'root'}' in {source}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {source}: {exc}") from None
    if node is None:
        return ExperimentConfig()
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{source}: top level must be a mapping")
    cfg = _section(ExperimentConfig, node, data, "", source)
    validate(cfg)
    return cfg


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(), str(path))


def validate(cfg: ExperimentConfig) -> None:
    """Cross-field checks; builds every derived config once so bad values fail early."""
    try:
        cfg.net_config()
        cfg.train_config()
        cfg.igml_config()
        cfg.benchmark_config()
        cfg.rollout()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    if cfg.eval.split not in ("cross", "intra"):
        raise ConfigError(f"eval.split must be 'cross' or 'intra', got {cfg.eval.split!r}")
    if max(cfg.eval.k_values) + cfg.eval.targets > cfg.collect.grasps_per_object:
        raise ConfigError("eval.k_values plus eval.targets exceed collect.grasps_per_object")


def with_overrides(cfg: ExperimentConfig, **sections) -> ExperimentConfig:
    """``with_overrides(cfg, training={"steps": 10})`` style updates."""
    out = cfg
    for name, values in sections.items():
        out = replace(out, **{name: replace(getattr(out, name), **values)})
    validate(out)
    return out
