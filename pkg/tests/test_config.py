import logging

import pytest
import yaml

from core.config import RunConfig, derive_seed, load_config
from core.constants import DEFAULT_CONFIG
from core.exceptions import ConfigError


def test_defaults_are_valid():
    config = load_config(environ={})
    assert config.seed == 0
    assert config.momentum == (0.8, 0.1)
    assert config.bit_lists == ([1, 2, 3, 4], [2, 3, 4])
    assert config.space_name == "S2"


def test_precedence_flags_over_env_over_file(tmp_path):
    path = tmp_path / "run.yml"
    path.write_text(yaml.safe_dump({"seed": 1, "epochs": 2, "permutations": 3}))
    config = load_config(path, overrides={"seed": 9, "threads": None},
                         environ={"SMPQ_EPOCHS": "7", "SMPQ_SEED": "5", "OTHER": "x"})
    assert config.seed == 9
    assert config.epochs == 7
    assert config.permutations == 3
    assert config.threads == DEFAULT_CONFIG["threads"]


def test_unknown_env_variable_is_ignored_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        config = load_config(environ={"SMPQ_HOME": "/opt/smpq", "SMPQ_EPOCHS": "4"})
    assert config.epochs == 4
    assert "SMPQ_HOME" in caplog.text


def test_string_scalars_are_coerced(tmp_path):
    path = tmp_path / "run.yml"
    path.write_text("alpha_lr: 1e-3\nmu: '2'\n")
    config = load_config(path, environ={})
    assert config.alpha_lr == pytest.approx(1e-3)
    assert config.mu == 2.0


@pytest.mark.parametrize("values", [
    {"unknown_key": 1},
    {"method": "nas"},
    {"truncation": 1.5},
    {"val_fraction": 1.0},
    {"permutations": 0},
    {"omega0": 100.0, "compression": 8.0},
    {"weight_bits": [2, 4]},
    {"weight_bits": [2, 40], "act_bits": [4]},
    {"search_space": "S7"},
    {"dataset": "idx"},
    {"dataset": "circles"},
    {"momentum_preset": "fast"},
    {"ablation_kind": "depth"},
    {"xi": 0.0},
    {"epochs": True},
    {"seed": None},
])
def test_invalid_values_rejected(values):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(values)


def test_missing_or_malformed_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yml", environ={})
    path = tmp_path / "list.yml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(path, environ={})
    path.write_text("seed: [1,\n")
    with pytest.raises(ConfigError):
        load_config(path, environ={})


def test_explicit_bit_lists_and_presets():
    config = RunConfig.from_dict({"weight_bits": [2, 4], "act_bits": [8], "momentum_preset": "ablation"})
    assert config.bit_lists == ([2, 4], [8])
    assert config.space_name == "custom"
    assert config.momentum == (0.75, 0.05)
    assert config.replace(beta=0.5).momentum == (0.5, 0.05)


def test_to_dict_resolves_momentum():
    data = RunConfig.from_dict({}).to_dict()
    assert (data["beta"], data["xi"]) == (0.8, 0.1)
    assert set(DEFAULT_CONFIG) <= set(data)


def test_derive_seed():
    assert derive_seed(0, "split") == derive_seed(0, "split")
    assert derive_seed(0, "split") != derive_seed(1, "split")
    assert derive_seed(0, "shapley", 1) != derive_seed(0, "shapley", 2)
    assert 0 <= derive_seed(123, "init") < 2 ** 64
    assert RunConfig.from_dict({"seed": 4}).seed_for("init") == derive_seed(4, "init")
