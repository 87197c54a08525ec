"""Alternating block training of the GMVAE.

Networks and ``pi_logits`` follow Adam steps on the negative ELBO; the
cluster means and variances follow full-dataset EM updates on the encoder
posterior means. A warmup phase trains a plain VAE (standard normal prior)
and k-means on its embeddings seeds the mixture. Inputs are standardized per
feature with the training-set mean and spread, and every mixture refit is
rounded to float32 so a saved model reloads unchanged.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, replace
import logging
from pathlib import Path
import time

import numpy as np

from .. import const
from ..config import TRAIN_CONFIG_SCHEMA, validate
from ..exceptions import ContractViolation, DivergedError, TrainingDiverged
from . import autodiff as ad
from .gmvae import (
    GmmParams,
    GmvaeModel,
    TERM_NAMES,
    elbo,
    fit_standardizer,
    log_component_density,
    model_to_bytes,
    posterior_means,
    standard_prior,
    storage_gmm,
)
from .numkit import Rng, kmeans

_LOGGER = logging.getLogger(__name__)

# child stream indices of the training root generator
STREAM_INIT = 0
STREAM_KMEANS = 1
STREAM_EPOCH_BASE = 16

CSV_HEADER = ("epoch", "elbo", *TERM_NAMES, "gmm_ll", "seconds")


@dataclass(frozen=True, kw_only=True)
class TrainConfig:
    """Schedule and model sizes for ``train``."""

    epochs: int = 100
    warmup_epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    em_every: int = 1
    n_clusters: int = 4
    latent_dim: int = 2
    hidden: tuple[int, ...] = const.ENCODER_HIDDEN
    kmeans_iter: int = 100
    seed: int = 0
    variance_floor: float = const.VARIANCE_FLOOR

    def __post_init__(self) -> None:
        validate(TRAIN_CONFIG_SCHEMA, asdict(self), "training config")


@dataclass(frozen=True, kw_only=True)
class EpochRecord:
    epoch: int
    elbo: float
    terms: tuple[float, float, float, float, float]
    gmm_ll: float
    seconds: float
    phase: str = "main"

    def row(self, timing: bool = True) -> tuple:
        return (self.epoch, self.elbo, *self.terms, self.gmm_ll, self.seconds if timing else 0.0)


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    @property
    def elbo(self) -> np.ndarray:
        return np.array([r.elbo for r in self.records])

    def to_csv(self, path: str | Path, timing: bool = True) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for record in self.records:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in record.row(timing)])
        _LOGGER.info(f"Wrote training log ({len(self)} epochs) to {path}")


# ---------------------------------------------------------------------------
# EM block
# ---------------------------------------------------------------------------

def _log_responsibilities(gmm: GmmParams, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    joint = log_component_density(gmm, points) + gmm.log_pi
    peak = joint.max(axis=1, keepdims=True)
    norm = peak + np.log(np.sum(np.exp(joint - peak), axis=1, keepdims=True))
    return joint - norm, norm[:, 0]


def gmm_log_likelihood(gmm: GmmParams, points) -> float:
    """sum_i log sum_c pi_c N(m_i; mu_c, sigma2_c I)."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        return 0.0
    return float(np.sum(_log_responsibilities(gmm, points)[1]))


def em_update(
    gmm: GmmParams,
    means,
    log_vars,
    variance_floor: float = const.VARIANCE_FLOOR,
) -> GmmParams:
    """One E + M step for ``mu`` and ``sigma2`` on encoder posterior means.

    The variance update adds the encoder variance of each point, so every
    q(z | x) counts as a distribution rather than a point. ``pi_logits`` is
    shared with the input, untouched.
    """
    m = np.asarray(means, dtype=np.float64)
    s2 = np.exp(np.asarray(log_vars, dtype=np.float64))
    if m.ndim != 2 or m.shape[1] != gmm.latent_dim or s2.shape != m.shape:
        raise ContractViolation(f"em_update expects N x {gmm.latent_dim} means and log-variances")
    if not np.all(np.isfinite(m)):
        raise ContractViolation("em_update embeddings must be finite")
    n, d = m.shape

    gamma = np.exp(_log_responsibilities(gmm, m)[0])
    mass = gamma.sum(axis=0)
    mu = gmm.mu.copy()
    sigma2 = gmm.sigma2.copy()
    spread = s2.sum(axis=1)

    live = mass >= const.EMPTY_CLUSTER_MASS
    for c in np.flatnonzero(live):
        w = gamma[:, c]
        mu[c] = w @ m / mass[c]
        sq = np.sum((m - mu[c]) ** 2, axis=1)
        sigma2[c] = float(w @ (sq + spread)) / (mass[c] * d)

    dead = np.flatnonzero(~live)
    if len(dead):
        order = np.argsort(gamma.max(axis=1), kind="stable")
        global_var = float(m.var(axis=0).mean()) if n > 1 else 1.0
        for slot, c in enumerate(dead):
            point = int(order[slot % n])
            _LOGGER.warning(f"Cluster {c} lost its mass (N_c={mass[c]:.3g}); re-seeding at embedding {point}")
            mu[c] = m[point]
            sigma2[c] = global_var

    sigma2 = np.maximum(sigma2, variance_floor)
    _LOGGER.debug("EM update: masses %s, sigma2 %s", np.round(mass, 3), np.round(sigma2, 5))
    return replace(gmm, mu=mu, sigma2=sigma2)


def init_gmm_from_embeddings(
    means,
    n_clusters: int,
    rng: Rng,
    variance_floor: float = const.VARIANCE_FLOOR,
    max_iter: int = 100,
) -> GmmParams:
    """k-means on posterior means: centroids, within-cluster variances, log proportions."""
    m = np.asarray(means, dtype=np.float64)
    centroids, labels = kmeans(m, n_clusters, rng, max_iter)
    n, d = m.shape
    sigma2 = np.empty(n_clusters)
    counts = np.empty(n_clusters)
    for c in range(n_clusters):
        members = m[labels == c]
        counts[c] = len(members)
        sigma2[c] = float(np.sum((members - centroids[c]) ** 2)) / (max(len(members), 1) * d)
    pi_logits = np.log(np.maximum(counts, 1e-8) / n)
    _LOGGER.info(f"Initialised {n_clusters} clusters with sizes {counts.astype(int).tolist()}")
    return GmmParams.create(mu=centroids, sigma2=sigma2, pi_logits=pi_logits, variance_floor=variance_floor)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _design_matrix(dataset) -> np.ndarray:
    matrix = dataset.matrix() if hasattr(dataset, "matrix") else np.asarray(dataset, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise ContractViolation("train needs a non-empty N x P dataset")
    return matrix


def _run_epoch(
    model: GmvaeModel,
    x: np.ndarray,
    config: TrainConfig,
    shuffle_rng: Rng,
    noise_rng: Rng,
) -> tuple[float, tuple[float, ...]]:
    n = x.shape[0]
    order = shuffle_rng.permutation(n)
    total = 0.0
    terms = np.zeros(len(TERM_NAMES))
    for start in range(0, n, config.batch_size):
        batch = x[order[start:start + config.batch_size]]
        objective, parts = elbo(model, batch, rng=noise_rng)
        ad.backward(-objective)
        for params in model.param_sets():
            ad.adam_step(params, config.lr, config.beta1, config.beta2, config.eps)
        weight = len(batch) / n
        total += objective.item() * weight
        terms += np.array([parts[name] for name in TERM_NAMES]) * weight
    return total, tuple(float(t) for t in terms)


def _initial_mixture(means: np.ndarray, config: TrainConfig, root: Rng) -> GmmParams:
    gmm = init_gmm_from_embeddings(
        means, config.n_clusters, root.child(STREAM_KMEANS), config.variance_floor, config.kmeans_iter
    )
    return storage_gmm(gmm, config.variance_floor)


def train(dataset, config: TrainConfig, rng: Rng | None = None) -> tuple[GmvaeModel, TrainLog]:
    """Warmup VAE, k-means initialisation, then alternating Adam / EM epochs.

    ``dataset`` is a ``FlowDataset`` or an N x P array. With one cluster the
    standard N(0, I) prior is kept throughout (plain VAE).
    """
    x = _design_matrix(dataset)
    root = rng if rng is not None else Rng(config.seed)
    grid = (dataset.height, dataset.width) if hasattr(dataset, "height") else None
    model = GmvaeModel.create(
        n_features=x.shape[1],
        latent_dim=config.latent_dim,
        rng=root.child(STREAM_INIT),
        gmm=standard_prior(config.latent_dim),
        hidden=config.hidden,
        grid=grid,
    )
    model.set_standardizer(*fit_standardizer(x))
    log = TrainLog()
    checkpoint: bytes | None = None
    _LOGGER.info(
        f"Training on {x.shape[0]} samples x {x.shape[1]} features: "
        f"K={config.n_clusters}, D={config.latent_dim}, {config.epochs} epochs ({config.warmup_epochs} warmup)"
    )

    for epoch in range(config.epochs):
        phase = "warmup" if epoch < config.warmup_epochs else "main"
        if epoch == config.warmup_epochs and config.n_clusters > 1:
            means, _ = posterior_means(model, x)
            model.gmm = _initial_mixture(means, config, root)

        started = time.perf_counter()
        try:
            value, terms = _run_epoch(
                model, x, config,
                root.child(STREAM_EPOCH_BASE + 2 * epoch),
                root.child(STREAM_EPOCH_BASE + 2 * epoch + 1),
            )
            if not np.isfinite(value):
                raise DivergedError("elbo")
        except DivergedError as err:
            _LOGGER.error("Training diverged in epoch %d: %s", epoch + 1, err)
            raise TrainingDiverged(err.term, epoch + 1, checkpoint) from err

        means, log_vars = posterior_means(model, x)
        main_epoch = epoch - config.warmup_epochs + 1
        if phase == "main" and config.n_clusters > 1 and main_epoch % config.em_every == 0:
            refit = em_update(model.gmm, means, log_vars, config.variance_floor)
            model.gmm = storage_gmm(refit, config.variance_floor)

        record = EpochRecord(
            epoch=epoch + 1,
            elbo=value,
            terms=terms,
            gmm_ll=gmm_log_likelihood(model.gmm, means),
            seconds=time.perf_counter() - started,
            phase=phase,
        )
        log.append(record)
        checkpoint = model_to_bytes(model)
        _LOGGER.info(
            "Epoch %d/%d (%s): elbo=%.4f gmm_ll=%.4f [%.2fs]",
            record.epoch, config.epochs, phase, record.elbo, record.gmm_ll, record.seconds,
        )

    if config.epochs == config.warmup_epochs and config.n_clusters > 1:
        means, _ = posterior_means(model, x)
        model.gmm = _initial_mixture(means, config, root)
    return model, log
