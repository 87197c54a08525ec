"""Validation schemas for library configs and command-line options."""

import logging

import voluptuous as vol

from .exceptions import ContractViolation

_LOGGER = logging.getLogger(__name__)

_POSITIVE_INT = vol.All(int, vol.Range(min=1))
_NON_NEGATIVE_INT = vol.All(int, vol.Range(min=0))
_POSITIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
_UNIT_INTERVAL_OPEN = vol.All(vol.Coerce(float), vol.Range(min=0, max=1, min_included=False, max_included=False))


def _check_schedule(config: dict) -> dict:
    """Cross-field checks that a plain mapping schema cannot express."""
    if config["warmup_epochs"] > config["epochs"]:
        raise vol.Invalid("warmup_epochs must not exceed epochs", path=["warmup_epochs"])
    return config


TRAIN_CONFIG_SCHEMA = vol.All(
    vol.Schema({
        vol.Required("epochs"): _POSITIVE_INT,
        vol.Required("warmup_epochs"): _NON_NEGATIVE_INT,
        vol.Required("batch_size"): _POSITIVE_INT,
        vol.Required("lr"): _POSITIVE_FLOAT,
        vol.Required("beta1"): _UNIT_INTERVAL_OPEN,
        vol.Required("beta2"): _UNIT_INTERVAL_OPEN,
        vol.Required("eps"): _POSITIVE_FLOAT,
        vol.Required("em_every"): _POSITIVE_INT,
        vol.Required("n_clusters"): _POSITIVE_INT,
        vol.Required("latent_dim"): _POSITIVE_INT,
        vol.Required("hidden"): vol.All(tuple, vol.Length(min=1), (_POSITIVE_INT,)),
        vol.Required("kmeans_iter"): _POSITIVE_INT,
        vol.Required("seed"): _NON_NEGATIVE_INT,
        vol.Required("variance_floor"): _POSITIVE_FLOAT,
    }),
    _check_schedule,
)

COND_CONFIG_SCHEMA = vol.Schema({
    vol.Required("steps"): _POSITIVE_INT,
    vol.Required("lr"): _POSITIVE_FLOAT,
    vol.Required("beta1"): _UNIT_INTERVAL_OPEN,
    vol.Required("beta2"): _UNIT_INTERVAL_OPEN,
    vol.Required("eps"): _POSITIVE_FLOAT,
    vol.Required("hidden"): _POSITIVE_INT,
    vol.Required("seed"): _NON_NEGATIVE_INT,
})


def _check_re_range(options: dict) -> dict:
    if not options["re_min"] < options["re_max"]:
        raise vol.Invalid("re_min must be below re_max", path=["re_min"])
    if options["re_min"] <= 0:
        raise vol.Invalid("Reynolds numbers must be positive", path=["re_min"])
    return options


GENERATE_SCHEMA = vol.All(
    vol.Schema({
        vol.Required("n"): _POSITIVE_INT,
        vol.Required("re_min"): vol.Coerce(float),
        vol.Required("re_max"): vol.Coerce(float),
        vol.Required("height"): vol.All(int, vol.Range(min=2)),
        vol.Required("width"): vol.All(int, vol.Range(min=2)),
        vol.Required("noise_frac"): vol.All(vol.Coerce(float), vol.Range(min=0)),
        vol.Required("seed"): _NON_NEGATIVE_INT,
    }),
    _check_re_range,
)

SCORE_SCHEMA = vol.Schema({
    vol.Required("k"): _POSITIVE_INT,
    vol.Required("alpha"): vol.All(vol.Coerce(float), vol.Range(min=0, max=1, min_included=False)),
    vol.Required("shuffles"): _NON_NEGATIVE_INT,
    vol.Required("seed"): _NON_NEGATIVE_INT,
    vol.Required("laplacian"): vol.In(["unnormalized", "symmetric"]),
})


def validate(schema, data: dict, what: str) -> dict:
    """Run a schema and convert failures into ``ContractViolation``."""
    try:
        return schema(data)
    except vol.Invalid as err:
        _LOGGER.debug("Rejected %s: %s", what, err)
        raise ContractViolation(f"Invalid {what}: {err}") from err
