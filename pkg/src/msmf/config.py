"""One JSON document that pins down an entire run.

Five sections: data, completion, model, loss, train.  Every section is
optional in the file (defaults fill the gaps) but unknown keys anywhere
are rejected rather than silently ignored, and the fully-resolved config
is echoed next to each artifact so a run can be reproduced from its own
outputs.

The data section either spells out synthetic generation parameters or
points at a CSV directory via {"path": ..., "window": ...}.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

from .completion import CompletionConfig
from .data import MODALITIES, SyntheticSpec
from .errors import ConfigurationError, ParseError
from .multitask import ModelConfig
from .training import LossConfig, TrainConfig

_SECTIONS = ("data", "completion", "model", "loss", "train")
_LOSS_RENAME = {"lambda": "lambda_"}


@dataclass
class RunConfig:
    data: SyntheticSpec
    completion: CompletionConfig
    model: ModelConfig
    loss: LossConfig
    train: TrainConfig
    data_path: str | None = None

    def validate(self) -> None:
        if self.data_path is None:
            self.data.validate()
        self.completion.validate()
        self.model.validate()
        self.loss.validate()
        self.train.validate()


def default_config() -> RunConfig:
    return RunConfig(data=SyntheticSpec(), completion=CompletionConfig(),
                     model=ModelConfig(), loss=LossConfig(),
                     train=TrainConfig())


def _build_section(cls, section: dict, name: str, rename: dict | None = None):
    rename = rename or {}
    known = {f.name for f in dataclasses.fields(cls)}
    hidden = set(rename.values())  # only reachable through their JSON name
    kwargs = {}
    for key, value in section.items():
        if key in rename:
            attr = rename[key]
        elif key in known and key not in hidden:
            attr = key
        else:
            raise ConfigurationError(f"unknown config key {name}.{key}")
        kwargs[attr] = value
    return cls(**kwargs)


def from_json_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigurationError("config root must be a JSON object")
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigurationError(
            f"unknown config sections: {sorted(unknown)}")

    data_path = None
    data_section = doc.get("data", {})
    if "path" in data_section:
        extra = set(data_section) - {"path", "window"}
        if extra:
            raise ConfigurationError(
                f"data.path excludes synthetic keys: {sorted(extra)}")
        data_path = str(data_section["path"])
        spec = SyntheticSpec(window=int(data_section.get("window", 16)))
    else:
        spec = _build_section(SyntheticSpec, data_section, "data")

    model = _build_section(ModelConfig, doc.get("model", {}), "model")
    for m in model.scale_modes:
        if m not in MODALITIES:
            raise ConfigurationError(f"unknown config key model.scale_modes.{m}")

    cfg = RunConfig(
        data=spec,
        completion=_build_section(CompletionConfig, doc.get("completion", {}),
                                  "completion"),
        model=model,
        loss=_build_section(LossConfig, doc.get("loss", {}), "loss",
                            rename=_LOSS_RENAME),
        train=_build_section(TrainConfig, doc.get("train", {}), "train"),
        data_path=data_path,
    )
    cfg.validate()
    return cfg


def to_json_dict(cfg: RunConfig) -> dict:
    """Full echo with every default resolved."""
    if cfg.data_path is not None:
        data = {"path": cfg.data_path, "window": cfg.data.window}
    else:
        data = dataclasses.asdict(cfg.data)
    loss = {"alpha": dict(cfg.loss.alpha), "lambda": cfg.loss.lambda_,
            "eta": cfg.loss.eta}
    return {
        "data": data,
        "completion": dataclasses.asdict(cfg.completion),
        "model": dataclasses.asdict(cfg.model),
        "loss": loss,
        "train": dataclasses.asdict(cfg.train),
    }


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as err:
        raise ConfigurationError(
            f"cannot read config {path}: {err.strerror or err}") from err
    except json.JSONDecodeError as err:
        raise ParseError(
            f"{os.path.basename(path)}:{err.lineno}: invalid JSON: "
            f"{err.msg}") from err
    return from_json_dict(doc)


def save_config(path: str, cfg: RunConfig) -> None:
    with open(path, "w") as fh:
        json.dump(to_json_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def echo_config(cfg: RunConfig, artifact_path: str) -> str:
    """Write the resolved config beside an output artifact."""
    path = artifact_path + ".config.json"
    save_config(path, cfg)
    return path


def deep_merge(base: dict, override: dict) -> dict:
    """Nested dict merge; scalars and lists in ``override`` win."""
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def apply_overrides(cfg: RunConfig, override: dict) -> RunConfig:
    """A new RunConfig with ``override`` merged into the JSON form."""
    return from_json_dict(deep_merge(to_json_dict(cfg), override))
