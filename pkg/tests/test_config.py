import json

import pytest

from hybridskin.config import load_run_config, parse_config_text, save_run_config
from hybridskin.errors import DataError, UsageError
from hybridskin.models import FitConfig


def test_defaults():
    cfg = load_run_config()
    assert cfg.n_node == 1024
    assert cfg.n_neighbor == 4
    assert cfg.metric == "geodesic"
    assert cfg.mode == "ahs"
    assert cfg.fit_config() == FitConfig()
    assert cfg.fit_config().lambda_arap == 5.0
    assert cfg.fit_config().lambda_nc == 10.0


def test_parse_config_text():
    text = "# run\nn-node = 64\nmetric=euclidean  # trailing comment\n\nlambda_arap = 2.5\n"
    assert parse_config_text(text) == {"n_node": "64", "metric": "euclidean", "lambda_arap": "2.5"}
    with pytest.raises(UsageError):
        parse_config_text("n_node 64")
    with pytest.raises(UsageError):
        parse_config_text("n_node = 1\nn-node = 2")


def test_file_then_overrides(tmp_path):
    (tmp_path / "rest.obj").write_text("v 0 0 0\n")
    path = tmp_path / "run.cfg"
    path.write_text("mesh = rest.obj\nn_node = 64\nmode = dqs\n")
    cfg = load_run_config(path, {"n_node": 16, "mode": None, "lambda-nc": 0.0})
    assert cfg.mesh == tmp_path / "rest.obj"
    assert cfg.n_node == 16
    assert cfg.mode == "dqs"
    assert cfg.lambda_nc == 0.0


def test_bad_values_are_usage_errors(tmp_path):
    with pytest.raises(UsageError):
        load_run_config(None, {"metric": "manhattan"})
    with pytest.raises(UsageError):
        load_run_config(None, {"per_face": 5})
    with pytest.raises(UsageError):
        load_run_config(None, {"lambda_arap": -1.0})
    path = tmp_path / "run.cfg"
    path.write_text("unknown_key = 3\n")
    with pytest.raises(UsageError):
        load_run_config(path)


def test_missing_paths_are_data_errors(tmp_path):
    with pytest.raises(DataError):
        load_run_config(tmp_path / "absent.cfg")
    with pytest.raises(DataError) as e:
        load_run_config(None, {"mesh": str(tmp_path / "absent.obj")})
    assert "path does not exist" in str(e.value)


def test_save_run_config(tmp_path):
    (tmp_path / "rest.obj").write_text("v 0 0 0\n")
    cfg = load_run_config(None, {"mesh": str(tmp_path / "rest.obj"), "optimizer": "gd"})
    out = tmp_path / "run_config.json"
    save_run_config(out, cfg)
    data = json.loads(out.read_text())
    assert data["mesh"] == str(tmp_path / "rest.obj")
    assert data["optimizer"] == "gd"
    assert data["out"] is None
