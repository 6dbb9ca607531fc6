import json

import pytest

from geodecoder.config import ConfigError, RunConfig, config_from_dict, dump_config, load_config
from geodecoder.model import GeoDecoderConfig
from geodecoder.taskgen import TaskKind
from geodecoder.trainer import TrainHyper


def test_empty_config_gives_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{}")
    cfg = load_config(p)
    assert cfg == RunConfig() == load_config(None)
    assert cfg.train.batch_size == 64 and cfg.train.epochs == 20 and cfg.train.peak_lr == 1e-4
    assert cfg.model == GeoDecoderConfig()
    p.write_text("")
    assert load_config(p) == RunConfig()


def test_negative_batch_size_names_field():
    with pytest.raises(ConfigError, match="batch_size"):
        config_from_dict({"train": {"batch_size": -1}})


@pytest.mark.parametrize("doc,field", [
    ({"model": {"hidden": 30}}, "hidden"),
    ({"world": {"n_pois": 0}}, "n_pois"),
    ({"data": {"mix": {"Teleport": 3}}}, "Teleport"),
    ({"data": {"mix": {"TagId": -3}}}, "TagId"),
    ({"data": {"policy": {"zoom": 3}}}, "zoom"),
    ({"eval": {"batch_size": 0}}, "batch_size"),
    ({"seed": -4}, "seed"),
    ({"bogus": 1}, "bogus"),
    ({"train": {"beta1": 1.5}}, "beta1"),
])
def test_validation_errors_name_field(doc, field):
    with pytest.raises(ConfigError, match=field):
        config_from_dict(doc)


def test_round_trip(tmp_path):
    doc = {
        "seed": 9,
        "world": {"extent_m": 3000.0, "n_aois": 10, "road_spacing_m": [300, 600]},
        "data": {"total": 40, "mix": {"TagId": 5}, "options": {"element_classes": ["water", "open land"]}},
        "model": {"layers": 1, "hidden": 32},
        "train": {"batch_size": 8, "max_steps": 3},
        "eval": {"ranked": False},
        "paths": {"dataset": "d", "run_dir": "r"},
    }
    cfg = config_from_dict(doc)
    text = dump_config(cfg)
    again = config_from_dict(json.loads(text))
    assert again == cfg
    assert dump_config(again) == text
    assert cfg.data.resolved_mix() == {TaskKind.TagId: 5}
    assert cfg.train == TrainHyper(batch_size=8, max_steps=3)


def test_invalid_json_reports_position(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"seed": 1,,}')
    with pytest.raises(ConfigError, match="line 1 column"):
        load_config(p)


def test_default_mix_total():
    cfg = config_from_dict({"data": {"total": 100}})
    assert sum(cfg.data.resolved_mix().values()) == 100
