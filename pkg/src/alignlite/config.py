"""Experiment configuration: TOML primary, JSON accepted, validated into dataclasses."""

import json
from dataclasses import dataclass, field

try:
    import tomllib as _toml
except ImportError:
    import tomli as _toml

from .errors import ConfigError
from .structure import StructureRegConfig
from .train import TrainConfig


@dataclass
class ExperimentConfig:
    seed: int
    out: str = "."
    data: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    model_kind: str = "linear"
    model_k: int = 512
    layer_select: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)


def _parse_reg_subset(value):
    if value is None or value == "batch":
        return "batch"
    if isinstance(value, str) and value.startswith("fixed:"):
        return ("fixed", int(value.split(":", 1)[1]))
    if isinstance(value, (list, tuple)) and len(value) == 2 and value[0] == "fixed":
        return ("fixed", int(value[1]))
    raise ConfigError(f"bad reg_subset {value!r}; expected 'batch' or 'fixed:<n>'")


def build_train_config(section: dict, seed: int) -> TrainConfig:
    reg_section = section.get("reg", {})
    try:
        reg = StructureRegConfig(
            levels=int(reg_section.get("levels", 1)),
            tau=float(reg_section.get("tau", 0.05)),
            eps=float(reg_section.get("eps", 1e-8)),
        )
    except ValueError as e:
        raise ConfigError(str(e))
    lr = section.get("lr", "auto")
    if lr != "auto":
        lr = float(lr)
    return TrainConfig(
        epochs=int(section.get("epochs", 1000)),
        batch_size=int(section.get("batch_size", 4096)),
        lr=lr,
        weight_decay=float(section.get("weight_decay", 1e-4)),
        grad_clip=float(section.get("grad_clip", 1.0)),
        early_stop_patience=int(section.get("early_stop_patience", 200)),
        lam=float(section.get("lam", 10.0)),
        lam_warmup_steps=int(section.get("lam_warmup_steps", 1000)),
        reg=reg,
        seed=int(section.get("seed", seed)),
        reg_subset=_parse_reg_subset(section.get("reg_subset")),
    )


def load_config(path) -> ExperimentConfig:
    try:
        if str(path).endswith(".json"):
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        else:
            with open(path, "rb") as fh:
                raw = _toml.load(fh)
    except (OSError, ValueError, _toml.TOMLDecodeError) as e:
        raise ConfigError(f"cannot parse config {path}: {e}")
    if "seed" not in raw:
        raise ConfigError("config must set a seed")
    seed = int(raw["seed"])
    train_section = raw.get("train", {})
    return ExperimentConfig(
        seed=seed,
        out=raw.get("out", "."),
        data=raw.get("data", {}),
        train=build_train_config(train_section, seed),
        model_kind=train_section.get("kind", "linear"),
        model_k=int(train_section.get("k", 512)),
        layer_select=raw.get("layer_select", {}),
        eval=raw.get("eval", {}),
        sweep=raw.get("sweep", {}),
    )
