"""Declarative run configuration: a strict JSON document.

The document has four optional-except-data sections::

    {
      "data":   {"path": "dataset", "channels": ["O1", "Oz", ...]},
      "model":  {"token_dim": 32, "prior": "logistic", ...},
      "train":  {"preset": "desk", "epochs": 40, ...},
      "output": {"dir": "runs/exp1"}
    }

Unknown keys anywhere are rejected with the offending field path so typos
fail loudly instead of silently training the wrong thing.  Value ranges are
still enforced by the config dataclasses themselves; this layer checks
structure and types.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

from .errors import InvalidParameterError
from .trainer import TrainConfig, preset

__all__ = ["RunConfig", "load_run_config", "parse_run_config", "resolved_document"]


def _is_bool(v) -> bool:
    return isinstance(v, bool)


def _is_int(v) -> bool:
    # bool is an int subclass; an int field set to true is almost
    # certainly a mistake
    return isinstance(v, int) and not isinstance(v, bool)


def _is_float(v) -> bool:
    return _is_int(v) or isinstance(v, float)


def _is_str(v) -> bool:
    return isinstance(v, str)


def _is_str_list(v) -> bool:
    return isinstance(v, list) and all(isinstance(x, str) for x in v)


_DATA_SCHEMA = {"path": (_is_str, "string"), "channels": (_is_str_list, "list of strings")}
_MODEL_SCHEMA = {
    "token_dim": (_is_int, "integer"),
    "embed_dim": (_is_int, "integer"),
    "eeg_encoder": (_is_str, "string"),
    "eeg_width": (_is_int, "integer"),
    "image_depth": (_is_int, "integer"),
    "image_width": (_is_int, "integer"),
    "frozen_depth": (_is_int, "integer"),
    "frozen_width": (_is_int, "integer"),
    "frozen_out_dim": (_is_int, "integer"),
    "prior": (_is_str, "string"),
    "degradation": (_is_str, "string"),
    "abvp_on": (_is_bool, "boolean"),
    "bvfe_on": (_is_bool, "boolean"),
    "mbcl_on": (_is_bool, "boolean"),
    "tau": (_is_float, "number"),
    "alpha_low": (_is_float, "number"),
    "alpha_high": (_is_float, "number"),
    "include_positive_in_denominator": (_is_bool, "boolean"),
    "seed": (_is_int, "integer"),
    "dtype": (_is_str, "string"),
}
_TRAIN_SCHEMA = {
    "preset": (_is_str, "string"),
    "batch_size": (_is_int, "integer"),
    "epochs": (_is_int, "integer"),
    "learning_rate": (_is_float, "number"),
    "weight_decay": (_is_float, "number"),
    "early_stop_patience": (_is_int, "integer"),
    "seed": (_is_int, "integer"),
    "alpha_high": (_is_float, "number"),
    "mode": (_is_str, "string"),
    "grad_clip": (_is_float, "number"),
}
_OUTPUT_SCHEMA = {"dir": (_is_str, "string")}
_SECTIONS = {
    "data": _DATA_SCHEMA,
    "model": _MODEL_SCHEMA,
    "train": _TRAIN_SCHEMA,
    "output": _OUTPUT_SCHEMA,
}


@dataclass(frozen=True)
class RunConfig:
    data_path: str
    channels: tuple[str, ...] | None
    model_overrides: dict
    train: TrainConfig
    train_preset: str | None
    out_dir: str | None


def _check_section(name: str, doc: dict, schema: dict) -> dict:
    section = doc.get(name, {})
    if not isinstance(section, dict):
        raise InvalidParameterError(f"{name}: expected an object")
    for key, value in section.items():
        if key not in schema:
            raise InvalidParameterError(f"{name}.{key}: unknown key")
        check, want = schema[key]
        if not check(value):
            raise InvalidParameterError(
                f"{name}.{key}: expected {want}, got {type(value).__name__}"
            )
    return dict(section)


def parse_run_config(doc) -> RunConfig:
    if not isinstance(doc, dict):
        raise InvalidParameterError("config root must be an object")
    for key in doc:
        if key not in _SECTIONS:
            raise InvalidParameterError(f"{key}: unknown section")

    data = _check_section("data", doc, _DATA_SCHEMA)
    model = _check_section("model", doc, _MODEL_SCHEMA)
    train_sec = _check_section("train", doc, _TRAIN_SCHEMA)
    output = _check_section("output", doc, _OUTPUT_SCHEMA)

    if "path" not in data:
        raise InvalidParameterError("data.path: required")

    preset_name = train_sec.pop("preset", None)
    base = preset(preset_name) if preset_name is not None else TrainConfig()
    train_cfg = replace(base, **train_sec) if train_sec else base

    channels = tuple(data["channels"]) if "channels" in data else None
    return RunConfig(
        data_path=data["path"],
        channels=channels,
        model_overrides=model,
        train=train_cfg,
        train_preset=preset_name,
        out_dir=output.get("dir"),
    )


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise InvalidParameterError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidParameterError(f"config is not valid JSON: {exc}") from None
    return parse_run_config(doc)


def resolved_document(rc: RunConfig) -> dict:
    """The config as actually used: preset expanded, alpha_high resolved."""
    train = asdict(rc.train)
    train["alpha_high"] = rc.train.resolved_alpha_high
    if rc.train_preset is not None:
        train["preset"] = rc.train_preset
    doc = {
        "data": {"path": rc.data_path},
        "model": dict(rc.model_overrides),
        "train": train,
    }
    if rc.channels is not None:
        doc["data"]["channels"] = list(rc.channels)
    if rc.out_dir is not None:
        doc["output"] = {"dir": rc.out_dir}
    return doc
