import pytest

from agents.agent_model import Scheme, TrainConfig
from api.run_config import normalize_key, parse_value, read_config_file, resolve_settings
from corpus.synthetic import SynthConfig
from diffcore.errors import ConfigError


def test_normalize_key():
    assert normalize_key("gamma-max") == "gamma_max"
    assert normalize_key("HSRL_T_MAX") == "T_max"
    assert normalize_key("topics") == "K"
    assert normalize_key("k") == "K"
    assert normalize_key("records") == "num_records"


def test_parse_value():
    assert parse_value(" 0.7 ") == "0.7"
    assert parse_value("none") is None
    assert parse_value("") is None
    assert parse_value("4, 9") == ["4", "9"]
    assert parse_value(3) == 3


def test_flags_override_environment_override_file(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("gamma1 = 0.5\ngamma2 = 0.5\ngamma-max = 0.3\nscheme = cascaded\n")
    settings = resolve_settings(
        path,
        flags={"gamma2": 0.8, "scheme": None},
        environ={"HSRL_GAMMA1": "0.6", "HSRL_GAMMA2": "0.6", "PATH": "/bin"},
    )
    cfg = settings.build(TrainConfig)
    assert cfg.gamma1 == 0.6
    assert cfg.gamma2 == 0.8
    assert cfg.gamma_max == 0.3
    assert cfg.scheme == Scheme.CASCADED


def test_file_values_are_coerced(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("sentence_len_range = 4,5\nK = 3\nd_v = 6\ngrad_clip = none\n")
    settings = resolve_settings(path, environ={})
    assert settings.build(SynthConfig).sentence_len_range == (4, 5)
    cfg = settings.build(TrainConfig)
    assert cfg.K == 3 and cfg.d_v == 6 and cfg.grad_clip == TrainConfig().grad_clip


def test_unknown_file_key(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("gama1 = 0.5\n")
    with pytest.raises(ConfigError):
        read_config_file(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "absent.env")


def test_unknown_environment_names_are_skipped():
    settings = resolve_settings(environ={"HSRL_NOT_A_SETTING": "1", "HSRL_SEED": "9"})
    assert settings.values == {"seed": "9"}
    assert settings.get_int("seed", 0) == 9


def test_invalid_values_become_config_errors():
    settings = resolve_settings(flags={"gamma_max": 1.0}, environ={})
    with pytest.raises(ConfigError, match="gamma_max"):
        settings.build(TrainConfig)


def test_float_lists():
    settings = resolve_settings(environ={"HSRL_GAMMA1_VALUES": "0.5,0.7"})
    assert settings.get_floats("gamma1_values") == [0.5, 0.7]
    assert settings.get_floats("gamma2_values", [0.9]) == [0.9]
    with pytest.raises(ConfigError):
        resolve_settings(environ={"HSRL_GAMMA2_VALUES": "a,b"}).get_floats("gamma2_values")
