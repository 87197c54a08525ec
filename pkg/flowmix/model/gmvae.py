"""Gaussian-mixture VAE: networks, latent prior, ELBO and sampling.

Generative model::

    c     ~ Cat(K, pi)
    z | c ~ N(mu_c, sigma2_c I)
    x | z ~ N(decoder_mean(z), decoder_var I)

with x in standardized coordinates ``(x - x_offset) / x_scale`` once a
standardizer is set; ``encode`` and ``decode`` take and return physical
fields. q(c | x) is taken as the prior posterior p(c | z) evaluated at the
encoder sample. ``mu`` and ``sigma2`` are plain arrays owned by the EM block
of the trainer; only ``pi_logits`` lives on the tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
import math
from pathlib import Path

import numpy as np

from .. import const
from ..exceptions import ContractViolation, DivergedError
from . import autodiff as ad
from .autodiff import Node, ParamSet
from .codec import pack_sections, unpack_sections
from .numkit import Rng

_LOGGER = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)
_DECODER_LOG_VAR_FLOOR = math.log(const.DECODER_VARIANCE_FLOOR)

TERM_NAMES = ("term1", "term2", "term3", "term4", "term5")


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass
class GmmParams:
    """Latent mixture prior: weights via ``pi_logits``, isotropic components."""

    params: ParamSet
    mu: np.ndarray
    sigma2: np.ndarray

    @classmethod
    def create(
        cls,
        mu,
        sigma2,
        pi_logits=None,
        variance_floor: float = const.VARIANCE_FLOOR,
    ) -> GmmParams:
        mu = np.array(mu, dtype=np.float64, ndmin=2)
        k = mu.shape[0]
        sigma2 = np.maximum(np.broadcast_to(np.asarray(sigma2, dtype=np.float64), (k,)).copy(), variance_floor)
        params = ParamSet(dtype=np.float64)
        params.add("pi_logits", np.zeros(k) if pi_logits is None else pi_logits)
        if params["pi_logits"].shape != (k,):
            raise ContractViolation(f"pi_logits must have shape ({k},)")
        return cls(params=params, mu=mu, sigma2=sigma2)

    @property
    def n_clusters(self) -> int:
        return self.mu.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.mu.shape[1]

    @property
    def pi_logits(self) -> Node:
        return self.params["pi_logits"]

    @property
    def log_pi(self) -> np.ndarray:
        logits = self.pi_logits.value.astype(np.float64)
        peak = logits.max()
        return logits - (peak + np.log(np.sum(np.exp(logits - peak))))

    @property
    def pi(self) -> np.ndarray:
        return np.exp(self.log_pi)


def standard_prior(latent_dim: int) -> GmmParams:
    """Single N(0, I) component: the plain VAE prior."""
    return GmmParams.create(mu=np.zeros((1, latent_dim)), sigma2=1.0)


def _float32_at_least(values: np.ndarray, floor: float) -> np.ndarray:
    rounded = np.asarray(values, dtype=np.float32)
    lowest = np.float32(floor)
    if lowest < floor:
        lowest = np.nextafter(lowest, np.float32(np.inf))
    return np.maximum(rounded, lowest)


def storage_gmm(gmm: GmmParams, variance_floor: float = 0.0) -> GmmParams:
    """The same mixture with every value exactly representable in float32.

    ``sigma2`` never rounds below ``variance_floor``. ``pi_logits`` moves to a
    float32 parameter set unless it already lives in one, so Adam moments
    survive repeated calls.
    """
    params = gmm.params
    if params.dtype != np.float32:
        params = ParamSet(dtype=np.float32)
        params.add("pi_logits", gmm.pi_logits.value)
    return replace(
        gmm,
        params=params,
        mu=gmm.mu.astype(np.float32).astype(np.float64),
        sigma2=_float32_at_least(gmm.sigma2, variance_floor).astype(np.float64),
    )


def fit_standardizer(x) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature float32 offset and scale of an N x P data matrix."""
    x = np.asarray(x, dtype=np.float64)
    offset = x.mean(axis=0)
    spread = x.std(axis=0)
    widest = float(spread.max()) if spread.size else 0.0
    if widest == 0.0:
        scale = np.ones_like(spread)
    else:
        scale = np.maximum(spread, const.STANDARDIZE_REL_FLOOR * widest)
    return offset.astype(np.float32), scale.astype(np.float32)


@dataclass
class EncoderDist:
    """Diagonal Gaussian q(z | x)."""

    mean: Node
    log_var: Node


@dataclass
class DecoderDist:
    """Gaussian p(x | z): physical ``mean`` and the shared learned log-variance.

    ``log_var`` is scalar and measured in standardized coordinates, so feature
    j has variance ``exp(log_var) * x_scale[j] ** 2``.
    """

    mean: Node
    log_var: Node


@dataclass
class GmvaeModel:
    encoder: ParamSet
    decoder: ParamSet
    gmm: GmmParams
    latent_dim: int
    n_features: int
    grid: tuple[int, int] | None = field(default=None)
    # per-feature float32 standardizer; None means identity
    x_offset: np.ndarray | None = field(default=None)
    x_scale: np.ndarray | None = field(default=None)

    @classmethod
    def create(
        cls,
        n_features: int,
        latent_dim: int,
        rng: Rng,
        gmm: GmmParams | None = None,
        hidden: tuple[int, ...] = const.ENCODER_HIDDEN,
        dtype=np.float32,
        grid: tuple[int, int] | None = None,
    ) -> GmvaeModel:
        """Fresh networks with Glorot-normal weights and zero biases."""
        encoder = ParamSet(dtype=dtype)
        widths = (n_features, *hidden, 2 * latent_dim)
        init_stack(encoder, widths, rng.child(0))

        decoder = ParamSet(dtype=dtype)
        widths = (latent_dim, *reversed(hidden), n_features)
        init_stack(decoder, widths, rng.child(1))
        decoder.add("out_log_var", np.array(const.DECODER_LOG_VAR_INIT))

        return cls(
            encoder=encoder,
            decoder=decoder,
            gmm=gmm if gmm is not None else standard_prior(latent_dim),
            latent_dim=latent_dim,
            n_features=n_features,
            grid=grid,
        )

    def param_sets(self) -> tuple[ParamSet, ...]:
        return (self.encoder, self.decoder, self.gmm.params)

    def set_standardizer(self, offset, scale) -> None:
        offset = np.asarray(offset, dtype=np.float32).reshape(-1)
        scale = np.asarray(scale, dtype=np.float32).reshape(-1)
        if offset.shape != (self.n_features,) or scale.shape != (self.n_features,):
            raise ContractViolation(f"standardizer needs {self.n_features} offsets and scales")
        if not (np.all(np.isfinite(offset)) and np.all(np.isfinite(scale)) and np.all(scale > 0)):
            raise ContractViolation("standardizer scales must be finite and positive")
        self.x_offset = offset
        self.x_scale = scale

    @property
    def log_scale_sum(self) -> float:
        """log |det| of the standardizing map's inverse."""
        if self.x_scale is None:
            return 0.0
        return float(np.sum(np.log(self.x_scale.astype(np.float64))))

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(self.encoder[f"layer{i}.weight"].shape[1] for i in range(_depth(self.encoder) - 1))

    @property
    def field_shape(self) -> tuple[int, int, int]:
        if self.grid is not None:
            return (len(const.CHANNELS), *self.grid)
        side = math.isqrt(self.n_features // len(const.CHANNELS))
        return (len(const.CHANNELS), side, side)


def init_stack(params: ParamSet, widths: tuple[int, ...], rng: Rng) -> None:
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        name = f"layer{i}" if i < len(widths) - 2 else "out"
        scale = math.sqrt(2.0 / (fan_in + fan_out))
        params.add(f"{name}.weight", rng.child(i).normal((fan_in, fan_out)) * scale)
        params.add(f"{name}.bias", np.zeros(fan_out))


def _depth(params: ParamSet) -> int:
    return sum(1 for name in params if name.endswith(".weight"))


def forward_stack(params: ParamSet, x: Node) -> Node:
    """tanh hidden layers followed by an affine output layer."""
    h = x
    hidden_layers = _depth(params) - 1
    for i in range(hidden_layers):
        h = ad.tanh(h @ params[f"layer{i}.weight"] + params[f"layer{i}.bias"])
    return h @ params["out.weight"] + params["out.bias"]


def _as_batch(x, width: int, what: str) -> Node:
    node = x if isinstance(x, Node) else Node(np.asarray(x, dtype=np.float64))
    if node.value.ndim != 2 or node.shape[1] != width:
        raise ContractViolation(f"{what} expects a batch x {width} input, got shape {node.shape}")
    if not np.all(np.isfinite(node.value)):
        raise ContractViolation(f"{what} input contains non-finite values")
    return node


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def _standardize(model: GmvaeModel, x: Node) -> Node:
    if model.x_offset is None:
        return x
    return (x - model.x_offset.astype(np.float64)) * (1.0 / model.x_scale.astype(np.float64))


def _encoder_head(model: GmvaeModel, x_std: Node) -> EncoderDist:
    out = forward_stack(model.encoder, x_std)
    d = model.latent_dim
    return EncoderDist(mean=out[:, :d], log_var=out[:, d:])


def _decoder_head(model: GmvaeModel, z: Node) -> tuple[Node, Node]:
    """Standardized mean and the floored scalar log-variance."""
    mean = forward_stack(model.decoder, z)
    raw = ad.promote(model.decoder["out_log_var"])
    # exp(log_var) >= DECODER_VARIANCE_FLOOR
    log_var = ad.relu(raw - _DECODER_LOG_VAR_FLOOR) + _DECODER_LOG_VAR_FLOOR
    return mean, log_var


def encode(model: GmvaeModel, x) -> EncoderDist:
    x = _as_batch(x, model.n_features, "encode")
    return _encoder_head(model, _standardize(model, x))


def decode(model: GmvaeModel, z) -> DecoderDist:
    mean, log_var = _decoder_head(model, _as_batch(z, model.latent_dim, "decode"))
    if model.x_offset is not None:
        mean = mean * model.x_scale.astype(np.float64) + model.x_offset.astype(np.float64)
    return DecoderDist(mean=mean, log_var=log_var)


def reparameterize(dist: EncoderDist, rng: Rng | None = None, noise: np.ndarray | None = None) -> Node:
    """z = mean + exp(log_var / 2) * eps with eps ~ N(0, I).

    ``noise`` supplies eps explicitly; otherwise it is drawn from ``rng``.
    """
    if noise is None:
        if rng is None:
            raise ContractViolation("reparameterize needs an rng or explicit noise")
        noise = rng.normal(dist.mean.shape)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != dist.mean.shape:
        raise ContractViolation(f"noise shape {noise.shape} does not match {dist.mean.shape}")
    return dist.mean + ad.exp(0.5 * dist.log_var) * noise


def log_component_density(gmm: GmmParams, z) -> np.ndarray:
    """N x K array of log N(z_i; mu_c, sigma2_c I)."""
    z = np.asarray(z, dtype=np.float64)
    sq = np.sum((z[:, None, :] - gmm.mu[None, :, :]) ** 2, axis=-1)
    d = gmm.latent_dim
    return -0.5 * d * (_LOG_2PI + np.log(gmm.sigma2)) - sq / (2.0 * gmm.sigma2)


def _component_log_density_node(gmm: GmmParams, z: Node) -> Node:
    # ||z - mu_c||^2 = ||z||^2 - 2 z.mu_c + ||mu_c||^2, mu and sigma2 as constants
    inv = 1.0 / gmm.sigma2
    z_sq = ad.sum(ad.square(z), axis=-1, keepdims=True)
    cross = z @ gmm.mu.T
    mu_sq = np.sum(gmm.mu ** 2, axis=1)
    sq = z_sq - 2.0 * cross + mu_sq
    offset = -0.5 * gmm.latent_dim * (_LOG_2PI + np.log(gmm.sigma2))
    return offset - 0.5 * (sq * inv)


def _log_pi_node(gmm: GmmParams) -> Node:
    logits = ad.promote(gmm.pi_logits)
    return logits - ad.log_sum_exp(logits)


def _log_responsibilities_node(gmm: GmmParams, z: Node, log_density: Node | None = None) -> Node:
    if log_density is None:
        log_density = _component_log_density_node(gmm, z)
    joint = log_density + _log_pi_node(gmm)
    return joint - ad.log_sum_exp(joint, keepdims=True)


def responsibilities(gmm: GmmParams, z) -> Node:
    """gamma_ic = p(c | z_i) under the mixture prior, evaluated in log space.

    Gradients reach ``pi_logits`` (and ``z`` when it is on the tape);
    ``mu`` and ``sigma2`` enter as constants.
    """
    z = z if isinstance(z, Node) else Node(np.asarray(z, dtype=np.float64))
    if z.value.ndim != 2 or z.shape[1] != gmm.latent_dim:
        raise ContractViolation(f"responsibilities expects batch x {gmm.latent_dim} latents, got {z.shape}")
    return ad.exp(_log_responsibilities_node(gmm, z))


def elbo(
    model: GmvaeModel,
    x,
    rng: Rng | None = None,
    noise: np.ndarray | None = None,
) -> tuple[Node, dict[str, float]]:
    """Batch-mean ELBO and the batch means of its five terms.

    term1  E[log p(x|z)]     reconstruction, density of the physical x
    term2  E[log p(z|c)]     prior fit
    term3  E[log p(c)]       cluster prior
    term4  -E[log q(z|x)]    Gaussian entropy, analytic
    term5  -E[log q(c|x)]    categorical entropy
    """
    x_std = _standardize(model, _as_batch(x, model.n_features, "elbo"))
    gmm = model.gmm
    dist = _encoder_head(model, x_std)
    z = reparameterize(dist, rng=rng, noise=noise)
    recon_mean, recon_log_var = _decoder_head(model, z)

    p = model.n_features
    d = model.latent_dim
    residual = ad.sum(ad.square(x_std - recon_mean), axis=-1)
    term1 = (
        (-0.5 * p * _LOG_2PI - model.log_scale_sum)
        - (0.5 * p) * recon_log_var
        - 0.5 * residual * ad.exp(-recon_log_var)
    )

    log_density = _component_log_density_node(gmm, z)
    log_gamma = _log_responsibilities_node(gmm, z, log_density)
    gamma = ad.exp(log_gamma)
    term2 = ad.sum(gamma * log_density, axis=-1)
    term3 = ad.sum(gamma * _log_pi_node(gmm), axis=-1)
    term4 = 0.5 * d * (1.0 + _LOG_2PI) + 0.5 * ad.sum(dist.log_var, axis=-1)
    # log_gamma stays finite, so gamma * log_gamma -> 0 as gamma underflows
    term5 = -ad.sum(gamma * log_gamma, axis=-1)

    terms = dict(zip(TERM_NAMES, (term1, term2, term3, term4, term5)))
    parts: dict[str, float] = {}
    for name, term in terms.items():
        value = float(np.mean(term.value))
        if not math.isfinite(value):
            _LOGGER.error("ELBO %s is not finite", name)
            raise DivergedError(name)
        parts[name] = value

    total = terms["term1"] + terms["term2"] + terms["term3"] + terms["term4"] + terms["term5"]
    return ad.mean(total), parts


def sample_prior(gmm: GmmParams, rng: Rng, n: int, cluster: int | None = None) -> np.ndarray:
    """Draw n latents, either from one component or ancestrally c ~ Cat(pi)."""
    k, d = gmm.n_clusters, gmm.latent_dim
    if cluster is not None:
        if not 0 <= cluster < k:
            raise ContractViolation(f"cluster {cluster} out of range for K={k}")
        labels = np.full(n, cluster, dtype=np.int64)
    else:
        cumulative = np.cumsum(gmm.pi)
        labels = np.searchsorted(cumulative, rng.uniform(n) * cumulative[-1], side="right")
        labels = np.minimum(labels, k - 1)
    eps = rng.normal((n, d))
    return gmm.mu[labels] + np.sqrt(gmm.sigma2[labels])[:, None] * eps


def decode_centroids(model: GmvaeModel) -> np.ndarray:
    """Decoder means at every cluster centre, one row per cluster."""
    return decode(model, model.gmm.mu).mean.value


def posterior_means(model: GmvaeModel, x, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Encoder mean and log-variance for a whole data matrix, batch by batch."""
    x = np.asarray(x, dtype=np.float64)
    means = np.empty((x.shape[0], model.latent_dim))
    log_vars = np.empty((x.shape[0], model.latent_dim))
    for start in range(0, x.shape[0], batch_size):
        dist = encode(model, x[start:start + batch_size])
        means[start:start + batch_size] = dist.mean.value
        log_vars[start:start + batch_size] = dist.log_var.value
    return means, log_vars


def cluster_labels(gmm: GmmParams, means: np.ndarray) -> np.ndarray:
    """Deterministic labels: argmax responsibility at the posterior mean."""
    if len(means) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmax(log_component_density(gmm, means) + gmm.log_pi, axis=1)


# ---------------------------------------------------------------------------
# GMVM container
# ---------------------------------------------------------------------------

def model_sections(model: GmvaeModel) -> dict[str, np.ndarray]:
    sections: dict[str, np.ndarray] = {}
    for prefix, params in (("encoder", model.encoder), ("decoder", model.decoder)):
        for name, value in params.arrays().items():
            sections[f"{prefix}/{name}"] = value
    sections["gmm/pi_logits"] = model.gmm.pi_logits.value
    sections["gmm/mu"] = model.gmm.mu
    sections["gmm/sigma2"] = model.gmm.sigma2
    if model.grid is not None:
        sections["meta/grid"] = np.asarray(model.grid, dtype=np.float64)
    if model.x_offset is not None:
        sections["meta/x_offset"] = model.x_offset
        sections["meta/x_scale"] = model.x_scale
    return sections


def model_from_sections(sections: dict[str, np.ndarray]) -> GmvaeModel:
    try:
        encoder = ParamSet()
        decoder = ParamSet()
        for name, value in sections.items():
            prefix, _, key = name.partition("/")
            if prefix == "encoder":
                encoder.add(key, value)
            elif prefix == "decoder":
                decoder.add(key, value.reshape(()) if key == "out_log_var" and value.size == 1 else value)
        gmm = GmmParams.create(
            mu=sections["gmm/mu"],
            sigma2=sections["gmm/sigma2"],
            pi_logits=sections["gmm/pi_logits"],
            variance_floor=0.0,
        )
        grid = sections.get("meta/grid")
        first = "layer0.weight" if "layer0.weight" in encoder else "out.weight"
        n_features = encoder[first].shape[0]
        latent_dim = gmm.latent_dim
        if encoder["out.weight"].shape[1] != 2 * latent_dim:
            raise ContractViolation("encoder output width does not match the latent dimension")
    except KeyError as err:
        raise ContractViolation(f"Model container is missing section {err}") from err
    model = GmvaeModel(
        encoder=encoder,
        decoder=decoder,
        gmm=gmm,
        latent_dim=latent_dim,
        n_features=n_features,
        grid=None if grid is None else (int(grid[0]), int(grid[1])),
    )
    if "meta/x_offset" in sections or "meta/x_scale" in sections:
        try:
            model.set_standardizer(sections["meta/x_offset"], sections["meta/x_scale"])
        except KeyError as err:
            raise ContractViolation(f"Model container is missing section {err}") from err
    return model


def model_to_bytes(model: GmvaeModel, extra: dict[str, np.ndarray] | None = None) -> bytes:
    sections = model_sections(model)
    sections.update(extra or {})
    return pack_sections(const.MODEL_MAGIC, const.MODEL_VERSION, sections)


def model_from_bytes(payload: bytes) -> tuple[GmvaeModel, dict[str, np.ndarray]]:
    """Parse a GMVM container; sections the model does not own are returned as extras."""
    sections = unpack_sections(payload, const.MODEL_MAGIC, const.MODEL_VERSION, "GMVM model")
    own = {name: value for name, value in sections.items() if name.split("/", 1)[0] in ("encoder", "decoder", "gmm", "meta")}
    extra = {name: value for name, value in sections.items() if name not in own}
    return model_from_sections(own), extra


def save_model(path: str | Path, model: GmvaeModel, extra: dict[str, np.ndarray] | None = None) -> None:
    Path(path).write_bytes(model_to_bytes(model, extra))
    _LOGGER.info(f"Wrote model to {path}")


def load_model(path: str | Path) -> tuple[GmvaeModel, dict[str, np.ndarray]]:
    return model_from_bytes(Path(path).read_bytes())
