import pytest
import yaml

from app.config import Config, coerce_value, expand_dotted_keys
from app.misc import ConfigError


def test_defaults_fill_in_derived_values():
    config = Config(use_environment=False)
    assert config.network.M == 32
    assert config.network.K == 5
    assert config.network.tau_p == 5
    assert config.hardware.b_tot == 3 * 32
    assert config.source_of("network.M") == "default"


@pytest.mark.parametrize("test_config", [{"network": {"M": 16, "K": 4}}])
def test_test_config_overrides(config, test_config):
    assert config.network.M == 16
    assert config.network.tau_p == 4
    assert config.hardware.b_tot == 48
    assert config.app.testing


def test_environment_overrides_file_values(monkeypatch):
    monkeypatch.setenv("MIXADC_NETWORK_M", "16")
    monkeypatch.setenv("MIXADC_POWER_GAMMA_PC", "[1.5, 3]")
    monkeypatch.setenv("MIXADC_APP_DEVELOPMENT", "true")
    config = Config(config_dict={"network": {"M": 64}})
    assert config.network.M == 16
    assert config.source_of("network.M") == "environment"
    assert config.power.gamma_pc == [1.5, 3]
    assert config.app.development is True


def test_environment_ignored_when_disabled(monkeypatch):
    monkeypatch.setenv("MIXADC_NETWORK_M", "16")
    config = Config(config_dict={"network": {"M": 64}}, use_environment=False)
    assert config.network.M == 64
    assert config.source_of("network.M") == "config"


def test_yaml_file_with_dotted_keys(tmp_path):
    path = tmp_path / "campaign.yaml"
    path.write_text(
        yaml.safe_dump(
            {
                "network.case": "CellFree",
                "network.K": 3,
                "hardware": {"bits_per_antenna": 4},
                "campaign.scenarios.method": "MinPilotDist",
            }
        )
    )
    config = Config(str(path), use_environment=False)
    assert config.network.case == "CellFree"
    assert config.network.K == 3
    assert config.hardware.b_tot == 4 * 32
    assert config.campaign.scenarios.method == ["MinPilotDist"]
    assert config.get_value("campaign.scenarios.combiner") == ["MR"]


def test_expand_dotted_keys_merges_sections():
    cfg = expand_dotted_keys({"network.M": 8, "network": {"K": 2}})
    assert cfg == {"network": {"M": 8, "K": 2}}


def test_coerce_value():
    assert coerce_value("3", "int") == 3
    assert coerce_value("1e-3", "float") == pytest.approx(1e-3)
    assert coerce_value(2, "float") == 2.0
    assert coerce_value("Equal", "list") == ["Equal"]
    assert coerce_value("no", "bool") is False


@pytest.mark.parametrize(
    "values",
    [
        {"network": {"case": "Distributed"}},
        {"network": {"K": 6, "tau_p": 4}},
        {"network": {"tau_c": 4}},
        {"network": {"alpha": 0}},
        {"hardware": {"b_tot": 16}},
        {"campaign": {"scenarios": {"method": ["Equal", "Random"]}}},
        {"campaign": {"n_drops": 0}},
    ],
)
def test_invalid_values_raise_config_error(values):
    with pytest.raises(ConfigError):
        Config(config_dict=values, use_environment=False)


def test_value_where_section_expected():
    with pytest.raises(TypeError):
        Config(config_dict={"network": 3}, use_environment=False)


def test_unknown_sections_are_kept():
    config = Config(config_dict={"notes": {"author": "lab"}}, use_environment=False)
    assert config.notes.author == "lab"
    with pytest.raises(AttributeError, match="network.nope"):
        config.network.nope


def test_config_hash_is_stable():
    a = Config(config_dict={"network": {"M": 8}}, use_environment=False)
    b = Config(config_dict={"network": {"M": 8}}, use_environment=False)
    c = Config(config_dict={"network": {"M": 9}}, use_environment=False)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert a.frozen()["network"]["M"] == 8
