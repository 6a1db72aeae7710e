"""Run configuration: a flat ``section.key = value`` text file.

Blank lines and ``#`` comments are ignored. Lists are comma-separated.
Relative paths resolve against the directory holding the config file.
"""

import dataclasses
import os
import typing
from dataclasses import dataclass, field

from fermech.errors import ConfigError


@dataclass
class RunSection:
    seed: int = 7
    out: str = "out"


@dataclass
class DataSection:
    dim: int = 32
    n_train_per_class: int = 100
    n_eval_per_class: int = 50
    separation: float = 6.0
    sigma: float = 1.0
    train_features: str = ""
    train_labels: str = ""
    eval_features: str = ""
    eval_labels: str = ""


@dataclass
class BackboneSection:
    mid_channels: int = 8
    mid_h: int = 4
    mid_w: int = 4
    high_dim: int = 32
    lr: float = 1e-3


@dataclass
class MreSection:
    lam: float = 1.0
    noise_ratio: float = 0.25


@dataclass
class GusSection:
    layers: tuple = (32, 6)
    clamp_negative_sim: bool = True
    degrees_from: str = "a_tilde"
    lr: float = 1e-4
    embedding: str = "signed"
    pretrain_epochs: int = 20
    epochs: int = 100
    finetune_backbone: bool = False


@dataclass
class LossSection:
    omega1: float = 1.0
    omega2: float = 0.5
    omega3: float = 0.1
    gamma: float = 2.0
    tau: float = 0.5


@dataclass
class TrainSection:
    epochs: int = 40
    batch_size: int = 32
    oversample: bool = True
    augment: bool = False


@dataclass
class AugmentSection:
    flip_p: float = 0.5
    crop_p: float = 0.5
    crop_ratio: float = 0.875
    blur_p: float = 0.3
    blur_sigma_min: float = 0.1
    blur_sigma_max: float = 2.0
    resize: int = 224


@dataclass
class EvalSection:
    batch_size: int = 32


@dataclass
class EnsembleSection:
    scheme: str = "s1"
    weights: str = ""


@dataclass
class MergeSection:
    gus_scores: str = ""
    mre_scores: str = ""
    dmue_scores: str = ""


@dataclass
class CorrectionSection:
    threshold: float = 0.93
    vote_fraction: float = 2 / 3
    min_subset: int = 3
    inclusive: bool = True
    predictions: str = ""
    features: str = ""


@dataclass
class ReportSection:
    labels: str = ""
    rows: tuple = ()


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    backbone: BackboneSection = field(default_factory=BackboneSection)
    mre: MreSection = field(default_factory=MreSection)
    gus: GusSection = field(default_factory=GusSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    eval: EvalSection = field(default_factory=EvalSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    merge: MergeSection = field(default_factory=MergeSection)
    correction: CorrectionSection = field(default_factory=CorrectionSection)
    report: ReportSection = field(default_factory=ReportSection)
    base_dir: str = "."


# keys whose file spelling is not a valid Python identifier
KEY_ALIASES = {("mre", "lambda"): "lam"}
PATH_KEYS = {
    ("run", "out"),
    ("data", "train_features"),
    ("data", "train_labels"),
    ("data", "eval_features"),
    ("data", "eval_labels"),
    ("merge", "gus_scores"),
    ("merge", "mre_scores"),
    ("merge", "dmue_scores"),
    ("correction", "predictions"),
    ("correction", "features"),
    ("report", "labels"),
}


def _coerce(key, raw, typ, default):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is tuple:
            items = [p.strip() for p in raw.split(",") if p.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(p) for p in items)
            return tuple(items)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key}: {exc}") from None


def _set(cfg, dotted, raw):
    if "." not in dotted:
        raise ConfigError(f"config key {dotted!r} is not of the form section.key")
    sec_name, key = dotted.split(".", 1)
    section = getattr(cfg, sec_name, None)
    if section is None or not dataclasses.is_dataclass(section):
        raise ConfigError(f"config key {dotted}: unknown section {sec_name!r}")
    attr = KEY_ALIASES.get((sec_name, key), key)
    hints = typing.get_type_hints(type(section))
    if attr not in hints:
        raise ConfigError(f"config key {dotted}: unknown key")
    value = _coerce(dotted, raw, hints[attr], getattr(section, attr))
    setattr(section, attr, value)


def parse_config_text(text, base_dir="."):
    cfg = RunConfig(base_dir=base_dir)
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected 'section.key = value'")
        key, value = line.split("=", 1)
        _set(cfg, key.strip(), value)
    return cfg


def load_config(path=None, overrides=()):
    if path is None:
        cfg = RunConfig(base_dir=os.getcwd())
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
        cfg = parse_config_text(text, os.path.dirname(os.path.abspath(path)))
    for dotted, raw in overrides:
        _set(cfg, dotted, raw)
    return cfg


def resolve(cfg, value):
    if not value:
        return value
    return value if os.path.isabs(value) else os.path.join(cfg.base_dir, value)


def path_or_default(cfg, value, out_dir, default_name):
    """Configured path if given, else ``default_name`` inside the output directory."""
    return resolve(cfg, value) if value else os.path.join(out_dir, default_name)
