# -*- coding: utf-8
""" Mixed-resolution ADC bit allocation for uplink Massive MIMO. """
from .config import Config
from .misc import logging_init

__version__ = "0.1.0"


def create_app(config=None):
    """Load the configuration (a Config, a YAML file name, or None for the
    defaults) and set up logging."""
    if config is None or isinstance(config, str):
        config = Config(config)
    logging_init(config)
    return config
