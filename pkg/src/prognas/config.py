"""Run configuration: JSON schema, full validation before any compute, and
desk/reference presets.

Top-level JSON keys: seed (int), out_dir (str), precision ("f32"|"f64"),
dataset (object), search (object), eval (object). See `CONFIG_SCHEMA` for the
per-field layout; every validation error names the offending field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .evalnet import EvalConfig
from .search import SearchSettings, StageConfig, StageSchedule

CONFIG_SCHEMA = """\
seed: int                         run seed (all RNG streams derive from it)
out_dir: str                      output directory for artifacts
precision: "f32" | "f64"          global scalar precision (default f32)
dataset:
  kind: "synth" | "cifar10"
  # synth fields
  preset: "easy" | "texture"      difficulty preset
  n: int                          training samples
  n_test: int                     held-out samples (eval subcommand)
  classes: int                    label count (>= 2)
  size: int                       square image side
  channels: int                   image channels
  noise: float | null             preset noise override
  # cifar10 fields
  dir: str                        directory with the binary batch files
  subset: int | null              seeded training-subset size
search:
  nodes: int                      intermediate nodes per cell
  stages: [                       progressive schedule, one entry per stage
    {cells, ops, channels, dropout, epochs, warmup_epochs, batch_size}
  ]
  weight_lr, weight_lr_min, weight_momentum, weight_decay: float
  alpha_lr, alpha_weight_decay: float
  alpha_betas: [float, float]
  skip_limit: int                 max skip-connects kept in the normal cell
  dropout_floor_frac: float       decay floor as a fraction of the initial rate
eval:
  cells, channels, epochs, batch_size, cutout: int
  drop_path, aux_weight, lr, lr_min, momentum, weight_decay: float
"""


class ConfigError(ValueError):
    """Invalid run configuration; `field` names the offending entry."""

    def __init__(self, field_path: str, message: str):
        self.field = field_path
        super().__init__(f"{field_path}: {message}")


@dataclass
class DatasetConfig:
    kind: str = "synth"
    preset: str = "texture"
    n: int = 512
    n_test: int = 256
    classes: int = 2
    size: int = 8
    channels: int = 3
    noise: float | None = None
    dir: str | None = None
    subset: int | None = None


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/out"
    precision: str = "f32"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    schedule: StageSchedule = field(default_factory=lambda: desk_schedule())
    settings: SearchSettings = field(default_factory=lambda: desk_settings())
    eval: EvalConfig = field(default_factory=EvalConfig)


def desk_schedule(nodes: int = 2) -> StageSchedule:
    """Laptop-scale progressive schedule: depth 2 -> 3 -> 4, candidates
    8 -> 5 -> 3, dropout 0.0 / 0.4 / 0.7."""
    return StageSchedule(stages=(
        StageConfig(cells=2, ops=8, channels=8, dropout=0.0),
        StageConfig(cells=3, ops=5, channels=8, dropout=0.4),
        StageConfig(cells=4, ops=3, channels=8, dropout=0.7),
    ), nodes=nodes)


def desk_settings() -> SearchSettings:
    """Desk-scale optimizer settings. The architecture step size is raised
    from the reference 6e-4: a desk run takes two orders of magnitude fewer
    architecture steps, so the total alpha displacement stays comparable."""
    return SearchSettings(alpha_lr=6e-3)


def reference_schedule() -> StageSchedule:
    """The reference progressive schedule: depth 5 -> 11 -> 17, candidates
    8 -> 5 -> 3, skip dropout 0.0 / 0.4 / 0.7, 25 epochs (10 warmup), batch 96."""
    return StageSchedule(stages=(
        StageConfig(cells=5, ops=8, channels=16, dropout=0.0, batch_size=96),
        StageConfig(cells=11, ops=5, channels=16, dropout=0.4, batch_size=96),
        StageConfig(cells=17, ops=3, channels=16, dropout=0.7, batch_size=96),
    ), nodes=4)


def widened_reference_schedule() -> StageSchedule:
    """Reference schedule with progressively increased width (16 -> 28 -> 40
    channels), the large-dataset variant."""
    return StageSchedule(stages=(
        StageConfig(cells=5, ops=8, channels=16, dropout=0.0, batch_size=96),
        StageConfig(cells=8, ops=5, channels=28, dropout=0.3, batch_size=96),
        StageConfig(cells=11, ops=3, channels=40, dropout=0.6, batch_size=96),
    ), nodes=4)


def desk_run_config(preset: str = "texture", seed: int = 0,
                    out_dir: str = "runs/out") -> RunConfig:
    return RunConfig(
        seed=seed, out_dir=out_dir,
        dataset=DatasetConfig(kind="synth", preset=preset),
        schedule=desk_schedule(),
        settings=desk_settings(),
        eval=EvalConfig(cells=4, channels=8, epochs=24, batch_size=32,
                        drop_path=0.1, aux_weight=0.4),
    )


# -- JSON loading ----------------------------------------------------------------


def _need(obj: dict, key: str, types, path: str, default=...):
    if key not in obj:
        if default is not ...:
            return default
        raise ConfigError(f"{path}.{key}", "missing required field")
    v = obj[key]
    if types is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if not isinstance(v, types) or isinstance(v, bool) and types is not bool:
        raise ConfigError(f"{path}.{key}", f"expected {types}, got {type(v).__name__}")
    return v


def _opt(obj: dict, key: str, types, path: str):
    if key not in obj or obj[key] is None:
        return None
    return _need(obj, key, types, path)


def _dataset_from_dict(d: dict, path: str) -> DatasetConfig:
    kind = _need(d, "kind", str, path, default="synth")
    if kind not in ("synth", "cifar10"):
        raise ConfigError(f"{path}.kind", f"must be synth or cifar10, got {kind!r}")
    cfg = DatasetConfig(
        kind=kind,
        preset=_need(d, "preset", str, path, default="texture"),
        n=_need(d, "n", int, path, default=512),
        n_test=_need(d, "n_test", int, path, default=256),
        classes=_need(d, "classes", int, path, default=2),
        size=_need(d, "size", int, path, default=8),
        channels=_need(d, "channels", int, path, default=3),
        noise=_opt(d, "noise", float, path),
        dir=_opt(d, "dir", str, path),
        subset=_opt(d, "subset", int, path),
    )
    if kind == "synth":
        if cfg.preset not in ("easy", "texture"):
            raise ConfigError(f"{path}.preset", f"must be easy or texture, got {cfg.preset!r}")
        if cfg.n < cfg.classes:
            raise ConfigError(f"{path}.n", f"must be >= classes ({cfg.classes})")
        if cfg.classes < 2:
            raise ConfigError(f"{path}.classes", "must be >= 2")
        if cfg.size < 4:
            raise ConfigError(f"{path}.size", "must be >= 4")
    else:
        if cfg.dir is None:
            raise ConfigError(f"{path}.dir", "required for cifar10")
        if cfg.subset is not None and cfg.subset < 2:
            raise ConfigError(f"{path}.subset", "must be >= 2")
    return cfg


def _schedule_from_dict(d: dict, path: str) -> StageSchedule:
    nodes = _need(d, "nodes", int, path, default=4)
    stages_raw = _need(d, "stages", list, path)
    stages = []
    for i, sd in enumerate(stages_raw):
        sp = f"{path}.stages[{i}]"
        if not isinstance(sd, dict):
            raise ConfigError(sp, "stage must be an object")
        stages.append(StageConfig(
            cells=_need(sd, "cells", int, sp),
            ops=_need(sd, "ops", int, sp),
            channels=_need(sd, "channels", int, sp),
            dropout=_need(sd, "dropout", float, sp),
            epochs=_need(sd, "epochs", int, sp, default=25),
            warmup_epochs=_need(sd, "warmup_epochs", int, sp, default=10),
            batch_size=_need(sd, "batch_size", int, sp, default=32),
        ))
    try:
        return StageSchedule(stages=tuple(stages), nodes=nodes)
    except ValueError as e:
        raise ConfigError(f"{path}.stages", str(e)) from None


def _settings_from_dict(d: dict, path: str) -> SearchSettings:
    base = SearchSettings()
    betas = _need(d, "alpha_betas", list, path, default=list(base.alpha_betas))
    if len(betas) != 2:
        raise ConfigError(f"{path}.alpha_betas", "expected [beta1, beta2]")
    s = SearchSettings(
        weight_lr=_need(d, "weight_lr", float, path, default=base.weight_lr),
        weight_lr_min=_need(d, "weight_lr_min", float, path, default=base.weight_lr_min),
        weight_momentum=_need(d, "weight_momentum", float, path, default=base.weight_momentum),
        weight_decay=_need(d, "weight_decay", float, path, default=base.weight_decay),
        alpha_lr=_need(d, "alpha_lr", float, path, default=base.alpha_lr),
        alpha_betas=(float(betas[0]), float(betas[1])),
        alpha_weight_decay=_need(d, "alpha_weight_decay", float, path,
                                 default=base.alpha_weight_decay),
        skip_limit=_need(d, "skip_limit", int, path, default=base.skip_limit),
        dropout_floor_frac=_need(d, "dropout_floor_frac", float, path,
                                 default=base.dropout_floor_frac),
    )
    if s.skip_limit < 0:
        raise ConfigError(f"{path}.skip_limit", "must be >= 0")
    if not 0.0 < s.dropout_floor_frac <= 1.0:
        raise ConfigError(f"{path}.dropout_floor_frac", "must be in (0, 1]")
    try:
        s.weight_optimizer(1)
        s.alpha_optimizer()
    except ValueError as e:
        raise ConfigError(path, str(e)) from None
    return s


def _eval_from_dict(d: dict, path: str) -> EvalConfig:
    base = EvalConfig()
    try:
        return EvalConfig(
            cells=_need(d, "cells", int, path, default=base.cells),
            channels=_need(d, "channels", int, path, default=base.channels),
            epochs=_need(d, "epochs", int, path, default=base.epochs),
            batch_size=_need(d, "batch_size", int, path, default=base.batch_size),
            cutout=_need(d, "cutout", int, path, default=base.cutout),
            drop_path=_need(d, "drop_path", float, path, default=base.drop_path),
            aux_weight=_need(d, "aux_weight", float, path, default=base.aux_weight),
            lr=_need(d, "lr", float, path, default=base.lr),
            lr_min=_need(d, "lr_min", float, path, default=base.lr_min),
            momentum=_need(d, "momentum", float, path, default=base.momentum),
            weight_decay=_need(d, "weight_decay", float, path, default=base.weight_decay),
        )
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(path, str(e)) from None


def run_config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    precision = _need(doc, "precision", str, "<root>", default="f32")
    if precision not in ("f32", "f64"):
        raise ConfigError("precision", f"must be f32 or f64, got {precision!r}")
    return RunConfig(
        seed=_need(doc, "seed", int, "<root>", default=0),
        out_dir=_need(doc, "out_dir", str, "<root>", default="runs/out"),
        precision=precision,
        dataset=_dataset_from_dict(_need(doc, "dataset", dict, "<root>", default={}),
                                   "dataset"),
        schedule=_schedule_from_dict(_need(doc, "search", dict, "<root>", default=
                                           {"nodes": 2, "stages": _desk_stage_dicts()}),
                                     "search"),
        settings=_settings_from_dict(doc.get("search", {}), "search"),
        eval=_eval_from_dict(_need(doc, "eval", dict, "<root>", default={}), "eval"),
    )


def _desk_stage_dicts() -> list[dict]:
    return [{"cells": s.cells, "ops": s.ops, "channels": s.channels,
             "dropout": s.dropout, "epochs": s.epochs,
             "warmup_epochs": s.warmup_epochs, "batch_size": s.batch_size}
            for s in desk_schedule().stages]


def load_run_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("<file>", f"invalid JSON at line {e.lineno}: {e.msg}") from None
    return run_config_from_dict(doc)


def apply_stage_overrides(schedule: StageSchedule, overrides: list[str]) -> StageSchedule:
    """Apply `--stage-override` strings: "epochs=5" hits every stage,
    "2.epochs=5" only stage 2 (1-based)."""
    stages = list(schedule.stages)
    int_fields = {"cells", "ops", "channels", "epochs", "warmup_epochs", "batch_size"}
    float_fields = {"dropout"}
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError("--stage-override", f"expected KEY=VALUE, got {ov!r}")
        key, value = ov.split("=", 1)
        stage_sel = None
        if "." in key:
            head, key = key.split(".", 1)
            try:
                stage_sel = int(head) - 1
            except ValueError:
                raise ConfigError("--stage-override", f"bad stage index {head!r}") from None
            if not 0 <= stage_sel < len(stages):
                raise ConfigError("--stage-override",
                                  f"stage {head} outside 1..{len(stages)}")
        if key in int_fields:
            parsed: int | float = int(value)
        elif key in float_fields:
            parsed = float(value)
        else:
            raise ConfigError("--stage-override", f"unknown stage field {key!r}")
        targets = range(len(stages)) if stage_sel is None else [stage_sel]
        for i in targets:
            stages[i] = replace(stages[i], **{key: parsed})
    try:
        return StageSchedule(stages=tuple(stages), nodes=schedule.nodes)
    except ValueError as e:
        raise ConfigError("--stage-override", str(e)) from None
