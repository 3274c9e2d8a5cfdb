"""Experiment configuration: dataclasses plus a flat key-value file
format.

Config files are plain text, one ``section.key = value`` per line, with
``#`` comments. Sections are ``net`` (NetConfig fields), ``train``
(TrainConfig), ``data`` (DataConfig) and top-level keys ``experiment``,
``seeds`` (comma-separated integers) and ``out_dir``. Values parse by
the target field's type; booleans accept true/false. Unknown keys are
rejected.

Example::

    experiment = cascade
    seeds = 0,1,2,3,4
    net.depth = 32
    net.cascade = pose_then_mesh
    train.steps = 220
    train.lr = 0.001
    data.noise_std = 0.05
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from ..network import NetConfig
from .dataset import DataConfig


@dataclass
class TrainConfig:
    steps: int = 700
    batch_size: int = 8
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_decay_at: float = 0.8       # fraction of the budget
    lr_decay_factor: float = 0.1   # 1.0 disables the decay
    eval_every: int = 100
    train_samples: int = 192
    eval_samples: int = 48
    checkpoint_every: int = 0   # 0: only at the end


@dataclass
class ExperimentConfig:
    experiment: str = "train"
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out_dir: str = "runs"
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)


def _parse_scalar(text, target_type):
    text = text.strip()
    if target_type is bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if target_type is int:
        return int(text)
    if target_type is float:
        return float(text)
    return text


def _field_types(obj):
    return {f.name: f.type for f in dataclasses.fields(obj)}


def parse_config(text) -> ExperimentConfig:
    cfg = ExperimentConfig()
    sections = {"net": cfg.net, "train": cfg.train, "data": cfg.data}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "experiment":
            cfg.experiment = value
        elif key == "out_dir":
            cfg.out_dir = value
        elif key == "seeds":
            cfg.seeds = [int(tok) for tok in value.split(",") if tok.strip()]
        elif "." in key:
            section, name = key.split(".", 1)
            if section not in sections:
                raise ValueError(f"line {lineno}: unknown section {section!r}")
            target = sections[section]
            types = _field_types(target)
            if name not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            kind = types[name]
            if isinstance(kind, str):   # postponed annotations
                kind = {"int": int, "float": float, "str": str, "bool": bool}.get(kind, str)
            setattr(target, name, _parse_scalar(value, kind))
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    # NetConfig validates in __post_init__, re-run it after the overrides
    cfg.net.__post_init__()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg: ExperimentConfig) -> str:
    """Render a config back to the file format (defaults included)."""
    lines = [
        f"experiment = {cfg.experiment}",
        f"seeds = {','.join(str(s) for s in cfg.seeds)}",
        f"out_dir = {cfg.out_dir}",
    ]
    for section in ("net", "train", "data"):
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            lines.append(f"{section}.{f.name} = {getattr(obj, f.name)}")
    return "\n".join(lines) + "\n"
