import json

import pytest

from src.exceptions import ConfigError
from src.features import VectorMode
from src.run_config import STORE_ENV_VAR, RunConfig, load_run_config, validate_config


@pytest.fixture(autouse=True)
def no_store_env(monkeypatch):
    monkeypatch.delenv(STORE_ENV_VAR, raising=False)


def test_defaults_are_valid():
    cfg = load_run_config()
    assert validate_config(cfg) == []
    assert cfg.mode is VectorMode.SHORT
    assert cfg.ecm_params().dthr == pytest.approx(0.18)
    assert cfg.inference_params().m_active == 3
    assert cfg.schedule().window_size == 800


def test_precedence_file_env_flags(tmp_path, monkeypatch):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"store_path": "/from/file", "dthr": 0.25, "m_active": 5}))

    cfg = load_run_config(str(path))
    assert (cfg.store_path, cfg.dthr, cfg.m_active) == ("/from/file", 0.25, 5)

    monkeypatch.setenv(STORE_ENV_VAR, "/from/env")
    cfg = load_run_config(str(path))
    assert cfg.store_path == "/from/env"
    assert cfg.dthr == 0.25

    cfg = load_run_config(str(path), {"store_path": "/from/flag", "m_active": None, "dthr": 0.3})
    assert cfg.store_path == "/from/flag"
    assert cfg.dthr == 0.3
    assert cfg.m_active == 5


def test_unknown_keys(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"dthr": 0.2, "bogus": 1}))
    with pytest.raises(ConfigError, match="bogus"):
        load_run_config(str(path))
    with pytest.raises(ConfigError):
        load_run_config(overrides={"nope": 1})


def test_file_values_take_the_default_types(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"dthr": "0.2", "m_active": 4.0, "window_size": "400", "learning_rate": 1}))
    cfg = load_run_config(str(path))
    assert cfg.dthr == 0.2
    assert cfg.m_active == 4 and isinstance(cfg.m_active, int)
    assert cfg.window_size == 400
    assert cfg.learning_rate == 1.0 and isinstance(cfg.learning_rate, float)
    assert validate_config(cfg) == []


@pytest.mark.parametrize("document", [
    {"dthr": "abc"},
    {"dthr": None},
    {"m_active": 2.5},
    {"m_active": True},
    {"io_mode": ["pipe"]},
])
def test_file_values_of_the_wrong_type(tmp_path, document):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(document))
    with pytest.raises(ConfigError, match=next(iter(document))):
        load_run_config(str(path))


def test_unreadable_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text("[1, 2")
    with pytest.raises(ConfigError):
        load_run_config(str(path))
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_run_config(str(path))


def test_invalid_values_are_listed(tmp_path):
    cfg = RunConfig(
        dthr=0.0,
        forgetting_factor=0.5,
        vector_mode="medium",
        window_size=10,
        min_refine_samples=20,
        registry_path=str(tmp_path / "missing.json"),
    )
    problems = validate_config(cfg)
    assert len(problems) == 5
    assert any("dthr" in p for p in problems)
    assert any("forgetting_factor" in p for p in problems)
    assert any("registry" in p for p in problems)
