import json

import pytest

from drconv.errors import ConfigError
from drconv.train.config import LayerConfig, ModelConfig, load_run_config, parse_data_arg, parse_run_config

MODEL = {"layers": [{"kind": "standard", "k": 3, "out_channels": 4},
                    {"kind": "drconv", "k": 1, "out_channels": 6, "m": 2}]}


def field_of(excinfo):
    return excinfo.value.field


def test_model_defaults_and_channels():
    model = ModelConfig.from_dict(MODEL)
    assert model.channels() == [(1, 4), (4, 6)]
    assert isinstance(model.layers[1], LayerConfig)
    assert model.layers[1].m == 2


def test_width_multiplier_spares_last_layer():
    model = ModelConfig.from_dict(dict(MODEL, width_multiplier=2.0))
    assert model.channels() == [(1, 8), (8, 6)]


def test_unknown_field():
    with pytest.raises(ConfigError) as excinfo:
        parse_run_config({"model": MODEL, "train": {"learning_rate": 0.1}})
    assert field_of(excinfo) == "train.learning_rate"


def test_bad_value_names_field():
    with pytest.raises(ConfigError) as excinfo:
        parse_run_config({"model": MODEL, "train": {"lr": 0}})
    assert field_of(excinfo) == "train.lr"
    assert str(excinfo.value).startswith("train.lr")


def test_even_kernel():
    with pytest.raises(ConfigError) as excinfo:
        ModelConfig.from_dict({"layers": [{"k": 2}]})
    assert field_of(excinfo) == "model.layers[0].k"


def test_hidden_must_divide():
    with pytest.raises(ConfigError) as excinfo:
        ModelConfig.from_dict({"layers": [{"kind": "drconv", "m": 4, "hidden": 6}]})
    assert field_of(excinfo) == "model.layers[0].hidden"


def test_empty_model_and_bad_pool_index():
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"layers": []})
    with pytest.raises(ConfigError) as excinfo:
        ModelConfig.from_dict(dict(MODEL, pool_after=[5]))
    assert field_of(excinfo) == "model.pool_after"


def test_missing_idx_paths(tmp_path):
    with pytest.raises(ConfigError) as excinfo:
        parse_data_arg("idx:", None)
    assert field_of(excinfo) == "data.images"
    images = tmp_path / "images"
    images.write_bytes(b"")
    with pytest.raises(ConfigError) as excinfo:
        parse_data_arg(f"idx:{images},{tmp_path / 'missing'}", None)
    assert field_of(excinfo) == "data.labels"


def test_bad_data_arg():
    with pytest.raises(ConfigError):
        parse_data_arg("mnist", None)


def test_load_run_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"model": MODEL, "train": {"epochs": 3}}))
    run = load_run_config(path)
    assert run.train.epochs == 3
    assert run.data.kind == "synth"
    again = parse_run_config(json.loads(json.dumps(run.to_dict())))
    assert again.to_dict() == run.to_dict()


def test_load_run_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_run_config(bad)
    with pytest.raises(ConfigError) as excinfo:
        parse_run_config({"train": {}})
    assert field_of(excinfo) == "model"
