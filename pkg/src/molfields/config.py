"""Run configuration: nested dataclass sections loaded from and emitted as YAML.

Unknown keys and wrongly typed values are rejected with the dotted key path
in the message. ``emit(load(x))`` is a fixed point of ``load``.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field

import yaml

from .store import config_hash
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class GridSection:
    cells: int = 3
    per_cell: int = 8
    margin: float = 2.0


@dataclass
class ArchSection:
    hidden: list[int] = field(default_factory=lambda: [64, 64, 64])
    omega0: float = 30.0


@dataclass
class HypernetSection:
    layers: int = 4
    model_dim: int = 64
    heads: int = 4
    pos_enc_dim: int = 32
    dropout: float = 0.0
    condition_on: str = "direction"
    conditioning_channel: bool = False
    tap_layer: int | None = None
    head_init_scale: float = 0.1


@dataclass
class ScheduleSection:
    T: int = 100
    s: float = 0.008


@dataclass
class TrainerSection:
    epochs: int = 5000
    steps_per_epoch: int = 1
    lr: float = 1e-4
    lr_decay: str = "cosine"
    optimizer: str = "adam"
    batch: int = 1
    curriculum: bool = True
    curriculum_warmup: int = 100
    curriculum_start: int = 10
    loss: str = "dist"
    fixed_queries: bool = False
    fixed_t: int | None = None
    checkpoint_every: int = 1000


@dataclass
class FitSection:
    steps: int = 2000
    lr: float = 1e-4
    cells: int = 4
    per_cell: int = 16


@dataclass
class ReconstructSection:
    n_seeds: int = 4096
    step: float = 0.5
    tol: float = 1e-3
    max_iter: int = 500
    exist_threshold: float = 0.5
    cluster_radius: float = 0.3
    min_cluster_size: int = 3
    interior: float = 0.9


@dataclass
class EmbedSection:
    hidden: int = 512
    task: str = "regression"
    lr: float = 1e-3
    steps: int = 2000
    tap_layer: int | None = None


@dataclass
class RunConfig:
    seed: int = 0
    elements: list[str] | None = None
    grid: GridSection = field(default_factory=GridSection)
    arch: ArchSection = field(default_factory=ArchSection)
    hypernet: HypernetSection = field(default_factory=HypernetSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    fit: FitSection = field(default_factory=FitSection)
    reconstruct: ReconstructSection = field(default_factory=ReconstructSection)
    embed: EmbedSection = field(default_factory=EmbedSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return config_hash(self.to_dict())


def _check_scalar(tp, value, where):
    if tp is bool:
        ok = isinstance(value, bool)
    elif tp is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif tp is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif tp is str:
        ok = isinstance(value, str)
    else:
        raise TypeError(f"unsupported config type {tp}")
    if not ok:
        raise ConfigError(f"{where}: expected {tp.__name__}, got {type(value).__name__} ({value!r})")
    return value


def _coerce(tp, value, where):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, where)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        return [_coerce(args[0], v, f"{where}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    return _check_scalar(tp, value, where)


def _build(cls, data, where=""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown key {where + '.' if where else ''}{key}")
    kwargs = {}
    for name in names:
        if name in data:
            kwargs[name] = _coerce(hints[name], data[name], f"{where + '.' if where else ''}{name}")
    return cls(**kwargs)


def from_dict(data: dict | None) -> RunConfig:
    return _build(RunConfig, data)


def loads(text: str, source: str = "<string>") -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        raise ConfigError(f"parse error at {where}: {getattr(err, 'problem', err)}") from None
    return from_dict(data)


def load_config(path=None) -> RunConfig:
    """Resolved config from a YAML file (``None`` gives all defaults)."""
    if path is None:
        return RunConfig()
    with open(path) as fh:
        return loads(fh.read(), str(path))


def emit(config: RunConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=None)


def save_resolved(config: RunConfig, path):
    with open(path, "w") as fh:
        fh.write(f"# config_hash: {config.digest()}\n")
        fh.write(emit(config))


def train_config(run: RunConfig) -> TrainConfig:
    """Flatten the grid/arch/hypernet/schedule/trainer sections into a ``TrainConfig``."""
    return TrainConfig(
        **{k: v for k, v in dataclasses.asdict(run.trainer).items() if k != "checkpoint_every"},
        cells=run.grid.cells,
        per_cell=run.grid.per_cell,
        margin=run.grid.margin,
        T=run.schedule.T,
        s=run.schedule.s,
        condition_on=run.hypernet.condition_on,
        conditioning_channel=run.hypernet.conditioning_channel,
        elements=run.elements,
        hidden=list(run.arch.hidden),
        omega0=run.arch.omega0,
        layers=run.hypernet.layers,
        model_dim=run.hypernet.model_dim,
        heads=run.hypernet.heads,
        pos_enc_dim=run.hypernet.pos_enc_dim,
        dropout=run.hypernet.dropout,
        head_init_scale=run.hypernet.head_init_scale,
        tap_layer=run.hypernet.tap_layer,
        seed=run.seed,
    )
