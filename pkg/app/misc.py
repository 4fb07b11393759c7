""" Misc helper functions and classes. """
import contextlib
import contextvars
import logging
import logging.config
import re

import numpy as np


class MixAdcError(Exception):
    """Base class for the errors raised by this package."""

    pass


class ConfigError(MixAdcError):
    """Exception raised for configuration values that break an invariant."""

    pass


class GeometryError(MixAdcError):
    """Exception raised when a network drop cannot satisfy its distance constraints."""

    pass


class AllocationError(MixAdcError):
    """Exception raised when a bit allocation cannot be computed."""

    pass


class EstimationError(MixAdcError):
    """Exception raised when an estimator cannot be built (singular Psi)."""

    pass


class GpInfeasibleError(MixAdcError):
    """Exception raised when a geometric program has no strictly feasible point."""

    pass


class CampaignError(MixAdcError):
    """Exception raised when too many drops of a campaign fail."""

    pass


# Values used to fill in %(drop)s, %(scenario)s and %(seed)s in log formats.
_log_context = contextvars.ContextVar("mixadc_log_context", default={})


@contextlib.contextmanager
def log_context(**values):
    """Attach values (drop index, scenario, seed...) to every log record
    emitted inside the block."""
    token = _log_context.set(dict(_log_context.get(), **values))
    try:
        yield
    finally:
        _log_context.reset(token)


def logging_init(config):
    if "logging" in config:
        logging.config.dictConfig(config.logging.as_dict())
        add_context_to_log_records(config.logging.as_dict())
    elif config.app.development or config.app.testing:
        logging.basicConfig(level=logging.DEBUG)
        # numpy/scipy are quiet, but the multiprocessing machinery is not.
        logging.getLogger("concurrent.futures").setLevel(logging.WARNING)
    else:
        logging.basicConfig(level=logging.WARNING)


def add_context_to_log_records(config):
    # Extract the keys used in the formatters in the logging config.
    keys = set()
    if "formatters" in config:
        for formatter in config["formatters"].values():
            if "format" in formatter:
                keys |= set(re.findall(r"%\((.+?)\)", formatter["format"]))

    old_factory = logging.getLogRecordFactory()
    if old_factory.__module__ == __name__:  # So the tests don't make a chain of these.
        old_factory = old_factory.old_factory

    # If any formatter keys refer to the campaign context, fill in the values.
    def record_factory(*args, **kwargs):
        record = old_factory(*args, **kwargs)
        context = _log_context.get()
        for k in keys:
            if k not in record.__dict__:
                record.__dict__[k] = context.get(k, "")
        return record

    record_factory.old_factory = old_factory
    logging.setLogRecordFactory(record_factory)


def make_rng(seed):
    """Return a numpy Generator from an int, a SeedSequence or a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_seeds(master_seed, n):
    """Derive n independent child seed sequences from one master seed."""
    if isinstance(master_seed, np.random.SeedSequence):
        return master_seed.spawn(n)
    return np.random.SeedSequence(master_seed).spawn(n)


def crandn(rng, shape):
    """Draw circularly-symmetric complex Gaussian samples with unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def freeze_array(arr, dtype=None):
    """Return a read-only copy of arr."""
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def db2pow(value_db):
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def dbm2watt(value_dbm):
    return 10.0 ** ((np.asarray(value_dbm, dtype=float) - 30.0) / 10.0)
