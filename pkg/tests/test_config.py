"""Run-config parsing: defaults, strict keys, merge, echo files."""

import json

import pytest

from msmf.config import (
    RunConfig,
    apply_overrides,
    deep_merge,
    default_config,
    echo_config,
    from_json_dict,
    load_config,
    save_config,
    to_json_dict,
)
from msmf.errors import ConfigurationError, ParseError


def test_default_config_is_valid_and_complete():
    cfg = default_config()
    cfg.validate()
    doc = to_json_dict(cfg)
    assert sorted(doc) == ["completion", "data", "loss", "model", "train"]
    assert doc["model"]["d_e"] == 16
    assert doc["completion"]["gibbs_steps"] == 20
    assert doc["loss"]["lambda"] == 1e-4


def test_json_round_trip_is_stable():
    cfg = default_config()
    doc = to_json_dict(cfg)
    again = to_json_dict(from_json_dict(doc))
    assert doc == again


def test_empty_document_means_all_defaults():
    cfg = from_json_dict({})
    assert to_json_dict(cfg) == to_json_dict(default_config())


def test_partial_sections_keep_other_defaults():
    cfg = from_json_dict({"model": {"d_e": 8}, "train": {"epochs": 3}})
    assert cfg.model.d_e == 8
    assert cfg.model.d_a == 16
    assert cfg.train.epochs == 3
    assert cfg.train.batch_size == 32


def test_unknown_sections_and_keys_rejected():
    with pytest.raises(ConfigurationError, match="sections"):
        from_json_dict({"fusion": {}})
    with pytest.raises(ConfigurationError, match="model.bogus"):
        from_json_dict({"model": {"bogus": 1}})
    with pytest.raises(ConfigurationError, match="train.lr"):
        from_json_dict({"train": {"lr": 0.1}})
    with pytest.raises(ConfigurationError):
        from_json_dict([])


def test_loss_lambda_spelled_without_underscore():
    cfg = from_json_dict({"loss": {"lambda": 0.5}})
    assert cfg.loss.lambda_ == 0.5
    with pytest.raises(ConfigurationError, match="loss.lambda_"):
        from_json_dict({"loss": {"lambda_": 0.5}})
    assert to_json_dict(cfg)["loss"]["lambda"] == 0.5


def test_alpha_must_name_both_tasks():
    with pytest.raises(ConfigurationError):
        from_json_dict({"loss": {"alpha": {"return": 1.0}}})


def test_data_path_mode_excludes_synthetic_keys():
    cfg = from_json_dict({"data": {"path": "/tmp/rows", "window": 12}})
    assert cfg.data_path == "/tmp/rows"
    assert cfg.data.window == 12
    assert to_json_dict(cfg)["data"] == {"path": "/tmp/rows", "window": 12}
    with pytest.raises(ConfigurationError, match="synthetic"):
        from_json_dict({"data": {"path": "/tmp/rows", "n_samples": 10}})


def test_scale_modes_must_name_known_modalities():
    cfg = from_json_dict({"model": {"scale_modes": {"image": "fine_only"}}})
    assert cfg.model.scale_modes == {"image": "fine_only"}
    with pytest.raises(ConfigurationError, match="scale_modes.weather"):
        from_json_dict({"model": {"scale_modes": {"weather": "multi"}}})


def test_values_are_validated_after_parsing():
    with pytest.raises(ConfigurationError):
        from_json_dict({"model": {"w_f": 4}})
    with pytest.raises(ConfigurationError):
        from_json_dict({"completion": {"gibbs_steps": 4, "n_samples": 9}})


def test_load_config_reports_file_and_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "model": {\n    "d_e": oops\n  }\n}\n')
    with pytest.raises(ParseError, match=r"broken\.json:3"):
        load_config(str(path))


def test_save_and_reload(tmp_path):
    cfg = from_json_dict({"train": {"epochs": 7}, "loss": {"lambda": 0.01}})
    path = str(tmp_path / "run.json")
    save_config(path, cfg)
    text = open(path).read()
    assert text.endswith("\n")
    assert json.loads(text)["train"]["epochs"] == 7
    reloaded = load_config(path)
    assert to_json_dict(reloaded) == to_json_dict(cfg)


def test_echo_config_sits_next_to_artifact(tmp_path):
    artifact = str(tmp_path / "model.json")
    out = echo_config(default_config(), artifact)
    assert out == artifact + ".config.json"
    assert json.load(open(out))["model"]["d_h"] == 32


def test_deep_merge_nests_and_overrides():
    base = {"a": {"x": 1, "y": 2}, "b": 5, "c": [1, 2]}
    override = {"a": {"y": 9}, "c": [3]}
    merged = deep_merge(base, override)
    assert merged == {"a": {"x": 1, "y": 9}, "b": 5, "c": [3]}
    assert base == {"a": {"x": 1, "y": 2}, "b": 5, "c": [1, 2]}


def test_apply_overrides_returns_fresh_config():
    cfg = default_config()
    out = apply_overrides(cfg, {"train": {"epochs": 2},
                                "model": {"fusion_mode": "stack"}})
    assert out.train.epochs == 2
    assert out.model.fusion_mode == "stack"
    assert cfg.train.epochs == 30
    assert isinstance(out, RunConfig)
    with pytest.raises(ConfigurationError):
        apply_overrides(cfg, {"model": {"rho": 0.0}})
