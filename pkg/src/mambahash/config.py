"""``key = value`` config files with [model], [train] and [loss] sections."""

from __future__ import annotations

import configparser
import dataclasses
from fractions import Fraction
from pathlib import Path

from .errors import ConfigError
from .network import ModelConfig
from .trainer import TrainConfig

# desk-scale runs need a larger step than the full-size default to converge quickly
PRESETS = {
    "tiny": lambda: (ModelConfig.tiny(), TrainConfig(learning_rate=1e-4, epochs=60)),
    "full": lambda: (ModelConfig(), TrainConfig()),
}


def _convert(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, list):
            return [int(x) for x in raw.replace(" ", "").split(",") if x]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(Fraction(raw))
        if raw.lower() == "none":
            return None
        if key in ("ciam_kernel", "crop_size"):
            return int(raw)
        return raw
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"config key {key!r}: cannot parse value {raw!r}") from exc


def _apply(base, section: dict[str, str], section_name: str):
    fields = {f.name: getattr(base, f.name) for f in dataclasses.fields(base)}
    updates = {}
    for key, raw in section.items():
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} in [{section_name}]")
        updates[key] = _convert(raw, fields[key], key)
    return updates


def load_config(path=None, preset: str = "tiny", **overrides) -> tuple[ModelConfig, TrainConfig]:
    """Resolve model/train configs: preset, then file values, then non-None overrides.

    Overrides use ``model.<key>`` / ``train.<key>`` style names with the dot
    replaced by a double underscore, e.g. ``train__epochs=3``.
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    model, train = PRESETS[preset]()
    model_kv: dict = {}
    train_kv: dict = {}
    if path is not None:
        if not Path(path).is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        cp = configparser.ConfigParser()
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for name in cp.sections():
            if name not in ("model", "train", "loss"):
                raise ConfigError(f"{path}: unknown section [{name}]")
        if cp.has_section("model"):
            model_kv.update(_apply(model, dict(cp["model"]), "model"))
        if cp.has_section("loss"):
            loss = dict(cp["loss"])
            if set(loss) - {"eta"}:
                raise ConfigError(f"{path}: [loss] only accepts 'eta'")
            model_kv.update(_apply(model, loss, "loss"))
        if cp.has_section("train"):
            train_kv.update(_apply(train, dict(cp["train"]), "train"))
    for key, value in overrides.items():
        if value is None:
            continue
        scope, _, name = key.partition("__")
        (model_kv if scope == "model" else train_kv)[name] = value
    if "hash_bits" in model_kv and "ciam_kernel" not in model_kv:
        model_kv["ciam_kernel"] = None
    model = dataclasses.replace(model, **model_kv)
    train = dataclasses.replace(train, **train_kv)
    return model, train
