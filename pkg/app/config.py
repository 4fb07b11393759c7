""" Config manager """
import hashlib
import json
import logging
import os

import yaml
from pyrsistent import freeze, thaw

from .misc import ConfigError
from .network import CHANNEL_CASES

logger = logging.getLogger(__name__)

ENV_PREFIX = "MIXADC_"

ALLOCATION_METHODS = (
    "Equal",
    "MinPilotDist",
    "MaxProdSinr",
    "MaxMinFair",
    "PowerConstrainedMaxProd",
)
COMBINERS = ("MR", "RZF")
QUANTIZATION_MODES = ("additive-model", "exact")


defaults = {  # key => default value
    "app": {
        "development": False,
        "testing": False,
    },
    # Simulation parameters of the reference setup, at desk scale (M=32, K=5).
    "network": {
        "M": 32,
        "K": 5,
        "case": "CoCorrI",
        "side_length_km": 0.4,
        "min_dist_km": 0.01,
        "alpha": 3.76,
        "omega_db": 148.1,
        "sigma_sh_db": 10.0,
        "sigma_ang_deg": 10.0,
        "sigma_lsf_db": 4.0,
        "qbar_over_sigma2": 1.0,
        "bandwidth_hz": 20e6,
        # 10 log10(rho_max B_w) and 10 log10(sigma2 B_w)
        "max_tx_power_dbm": 20.0,
        "noise_power_dbm": -94.0,
        "tau_c": 200,
        # None means tau_p = K.
        "tau_p": None,
    },
    "hardware": {
        "zeta": 1.6,
        # Total bits are bits_per_antenna * M unless b_tot is set.
        "bits_per_antenna": 3,
        "b_tot": None,
    },
    "gp": {"tol": 1e-8, "max_iter": 500},
    "optimize": {"max_outer": 10, "rel_tol": 1e-6},
    "power": {
        "P_cst": 10.0,
        "P_ue": 0.1,
        "P_bsa": 0.05,
        "P_cd": 1.15,  # J/Gbit
        "eta": 0.39,
        "D1": 0.006,  # W per conversion step
        "gamma_pc": [2.0, 5.0, 10.0, 20.0, 50.0],
    },
    "campaign": {
        "name": "campaign",
        "n_drops": 200,
        "n_trials_per_drop": 2000,
        "n_trials_exact": 10000,
        "master_seed": 1,
        "output": "results",
        "workers": 1,
        "max_failure_fraction": 0.05,
        # Every list is expanded into a cartesian product of scenarios.
        "scenarios": {
            "case": ["CoCorrI"],
            "method": ["Equal", "MinPilotDist"],
            "combiner": ["MR"],
            "quantization": ["additive-model"],
        },
    },
}


def add_values_to_config(defaults, values, source):
    """Given a defaults dictionary (structured by make_config_tree) and a
    possibly nested config dict, combine the two and return a new dict
    structured like the defaults.  Every node will have at least 'type',
    'source' and 'value' keys."""
    result = {}
    for key in list(defaults.keys()) + list(values.keys()):
        if key in result:
            continue
        value = values.get(key)
        default = defaults.get(key)
        if key not in defaults:
            if isinstance(values[key], dict):
                result[key] = {
                    "type": "map",
                    "source": None,
                    "value": add_values_to_config({}, value, source),
                }
            else:
                result[key] = {"type": "any", "source": source, "value": value}
        elif key not in values:
            result[key] = default
        else:
            if default["type"] == "map":
                if not isinstance(value, dict):
                    raise TypeError(
                        f"Value found where dict expected at {key}: {value} in {source}"
                    )
                result[key] = {
                    "type": "map",
                    "source": None,
                    "value": add_values_to_config(default["value"], value, source),
                }
            else:
                result[key] = {
                    "type": default["type"],
                    "source": source,
                    "value": coerce_value(value, default["type"]),
                }
    return result


def make_config_tree(cfg_dict):
    """Turn a plain nested dictionary into the node structure used by Map."""
    tree = {}
    for key, val in cfg_dict.items():
        if isinstance(val, dict):
            tree[key] = {
                "type": "map",
                "source": None,
                "value": make_config_tree(val),
            }
        else:
            tree[key] = {"type": type_name(val), "source": "default", "value": val}
    return tree


def type_name(value):
    if value is None:
        return "any"
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int"
    if isinstance(value, float):
        return "float"
    if isinstance(value, list):
        return "list"
    return "str"


def coerce_value(value, typ):
    """Convert strings from the environment to the type of the default."""
    if not isinstance(value, str) or typ in ("str", "any"):
        if typ == "float" and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        return value
    parsed = yaml.safe_load(value)
    if typ == "bool":
        return bool(parsed)
    if typ == "int":
        return int(parsed)
    if typ == "float":
        return float(parsed)
    if typ == "list" and not isinstance(parsed, list):
        return [parsed]
    return parsed


def expand_dotted_keys(cfg):
    """Accept flat files written as `network.M: 32` by nesting dotted keys."""
    result = {}
    for key, val in cfg.items():
        if isinstance(val, dict):
            val = expand_dotted_keys(val)
        parts = str(key).split(".")
        node = result
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        if isinstance(val, dict) and isinstance(node.get(parts[-1]), dict):
            node[parts[-1]].update(val)
        else:
            node[parts[-1]] = val
    return result


def get_environment_values(config, prefix=ENV_PREFIX):
    """Build a dict of values from environment variables with names
    matching the keys in config."""
    new_items = {}
    for key, val in config.items():
        if val["type"] == "map":
            env_vals = get_environment_values(val["value"], prefix + key.upper() + "_")
            if env_vals:
                new_items[key] = env_vals
        else:
            var = prefix + key.upper()
            if var in os.environ:
                new_items[key] = os.environ[var]
    return new_items


cfg_defaults = make_config_tree(defaults)


class Map:
    """A dictionary-like object whose keys are accessable as attributes,
    constructed from a nested dictionary structure like the one
    make_config_tree returns.  Nested maps in the dictionary passed at
    initialization will be converted to nested Map objects."""

    def __init__(self, sdict, prefixes=None):
        self._content = {}
        self._prefixes = [] if prefixes is None else prefixes

        for key, val in sdict.items():
            self._content[key] = dict(val)
            if val["type"] == "map":
                self._content[key]["value"] = Map(val["value"], self._prefixes + [key])

    def _key_name_from_attr(self, attr):
        return ".".join(self._prefixes + [attr])

    def __getattr__(self, attr):
        if attr.startswith("_"):
            raise AttributeError(attr)
        try:
            return self._content[attr]["value"]
        except KeyError:
            raise AttributeError(
                f"No configuration value named {self._key_name_from_attr(attr)}"
            )

    def __getitem__(self, attr):
        return self.__getattr__(attr)

    def keys(self):
        return self._content.keys()

    def as_dict(self):
        result = {}
        for key, val in self._content.items():
            if isinstance(val["value"], Map):
                result[key] = val["value"].as_dict()
            else:
                result[key] = self.__getattr__(key)
        return result

    def items(self):
        return self.as_dict().items()

    def __contains__(self, attr):
        return attr in self._content

    def source_of(self, attr):
        """Return where a value came from: default, config or environment."""
        attrs = attr.split(".")
        if len(attrs) > 1:
            return self._content[attrs[0]]["value"].source_of(".".join(attrs[1:]))
        return self._content[attr]["source"]

    def get_value(self, attr):
        """Return a value possibly from a nested map named by keys joined by .'s"""
        attrs = attr.split(".")
        if len(attrs) > 1:
            return self._content[attrs[0]]["value"].get_value(".".join(attrs[1:]))
        else:
            return self.__getattr__(attr)

    def _set_value(self, attr, new_value):
        """Set a value possibly in a nested map named by keys joined by .'s"""
        attrs = attr.split(".")
        if len(attrs) > 1:
            return self._content[attrs[0]]["value"]._set_value(
                ".".join(attrs[1:]), new_value
            )
        else:
            self._content[attrs[0]]["value"] = new_value


class Config(Map):
    """ Main config object """

    def __init__(
        self,
        config_filename=None,
        use_environment=True,
        config_dict=None,
    ):
        if config_filename is None:
            cfg = {}
            if config_dict:
                cfg = config_dict
        else:
            with open(config_filename) as stream:
                cfg = yaml.safe_load(stream) or {}

        config = add_values_to_config(cfg_defaults, expand_dotted_keys(cfg), "config")
        if use_environment:
            env = get_environment_values(config)
            config = add_values_to_config(config, env, "environment")

        super(Config, self).__init__(config)
        self.check_network_config()
        self.check_hardware_config()
        self.check_campaign_config()

    def check_network_config(self):
        net = self.network
        if net.case not in CHANNEL_CASES:
            raise ConfigError(
                f"network.case must be one of {', '.join(CHANNEL_CASES)}, got {net.case}"
            )
        for key in ("M", "K", "tau_c"):
            if int(net[key]) < 1:
                raise ConfigError(f"network.{key} must be at least 1")
        if net.tau_p is None:
            self._set_value("network.tau_p", int(net.K))
        if int(net.tau_p) < int(net.K):
            raise ConfigError("network.tau_p must be at least network.K")
        if int(net.tau_p) > int(net.tau_c):
            raise ConfigError("network.tau_p cannot exceed network.tau_c")
        for key in (
            "side_length_km",
            "min_dist_km",
            "alpha",
            "qbar_over_sigma2",
            "bandwidth_hz",
        ):
            if float(net[key]) <= 0:
                raise ConfigError(f"network.{key} must be positive")

    def check_hardware_config(self):
        hw = self.hardware
        if hw.b_tot is None:
            self._set_value(
                "hardware.b_tot", int(hw.bits_per_antenna) * int(self.network.M)
            )
        if int(hw.b_tot) < int(self.network.M):
            raise ConfigError("hardware.b_tot must be at least network.M")

    def check_campaign_config(self):
        scenarios = self.campaign.scenarios
        allowed = {
            "case": CHANNEL_CASES,
            "method": ALLOCATION_METHODS,
            "combiner": COMBINERS,
            "quantization": QUANTIZATION_MODES,
        }
        for key, choices in allowed.items():
            if key not in scenarios:
                raise ConfigError(f"campaign.scenarios.{key} is missing")
            values = scenarios[key]
            if not isinstance(values, list):
                values = [values]
                self._set_value(f"campaign.scenarios.{key}", values)
            for value in values:
                if value not in choices:
                    raise ConfigError(
                        f"campaign.scenarios.{key}: {value} is not one of {', '.join(choices)}"
                    )
        if int(self.campaign.n_drops) < 1:
            raise ConfigError("campaign.n_drops must be at least 1")
        if int(self.campaign.workers) < 1:
            raise ConfigError("campaign.workers must be at least 1")

    def frozen(self):
        """Return the configuration as an immutable pyrsistent map."""
        return freeze(self.as_dict())

    def config_hash(self):
        """Hash of the canonical JSON rendering of the configuration."""
        canonical = json.dumps(
            thaw(self.frozen()), sort_keys=True, separators=(",", ":"), default=str
        )
        return hashlib.sha256(canonical.encode()).hexdigest()
