"""Reynolds number to latent regression composed with a frozen decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass
import hashlib
import logging
from pathlib import Path

import numpy as np

from .. import const
from ..config import COND_CONFIG_SCHEMA, validate
from ..exceptions import ContractViolation, DivergedError, FreezeViolation
from . import autodiff as ad
from .autodiff import Node, ParamSet
from .gmvae import (
    GmvaeModel,
    decode,
    forward_stack,
    init_stack,
    load_model,
    model_to_bytes,
    posterior_means,
    save_model,
)
from .numkit import Rng

_LOGGER = logging.getLogger(__name__)

SECTION_PREFIX = "cond/"
NORMALIZATION_SECTION = "cond/normalization"


@dataclass(frozen=True, kw_only=True)
class CondConfig:
    steps: int = 3000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden: int = const.COND_HIDDEN
    seed: int = 0

    def __post_init__(self) -> None:
        validate(COND_CONFIG_SCHEMA, asdict(self), "conditional config")


@dataclass
class CondMlp:
    """1 -> hidden -> hidden -> D tanh network on standardised Re.

    The normalisation constants are stored rounded to float32 so that they
    survive the container unchanged.
    """

    params: ParamSet
    re_mean: float
    re_std: float
    re_min: float
    re_max: float

    @property
    def latent_dim(self) -> int:
        return self.params["out.weight"].shape[1]

    def forward(self, re) -> Node:
        scaled = (np.asarray(re, dtype=np.float64).reshape(-1, 1) - self.re_mean) / self.re_std
        return forward_stack(self.params, Node(scaled))

    def predict(self, re) -> np.ndarray:
        return self.forward(re).value


def _f32(value: float) -> float:
    return float(np.float32(value))


def fit_cond_mlp(re, targets, config: CondConfig, rng: Rng | None = None) -> CondMlp:
    """Full-batch Adam on the mean squared latent error."""
    re = np.asarray(re, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim != 2 or targets.shape[0] != re.shape[0] or re.shape[0] == 0:
        raise ContractViolation("fit_cond_mlp needs one latent target row per Reynolds number")
    rng = rng if rng is not None else Rng(config.seed)

    std = float(re.std())
    params = ParamSet()
    init_stack(params, (1, config.hidden, config.hidden, targets.shape[1]), rng.child(0))
    mlp = CondMlp(
        params=params,
        re_mean=_f32(re.mean()),
        re_std=_f32(std if std > 0 else 1.0),
        re_min=_f32(re.min()),
        re_max=_f32(re.max()),
    )

    loss_value = float("nan")
    for step in range(config.steps):
        loss = ad.mean(ad.square(mlp.forward(re) - targets))
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            _LOGGER.error("Conditional regression diverged at step %d", step + 1)
            raise DivergedError("cond_loss", f"Conditional regression diverged at step {step + 1}")
        ad.backward(loss)
        ad.adam_step(params, config.lr, config.beta1, config.beta2, config.eps)
        if (step + 1) % 500 == 0:
            _LOGGER.debug("Conditional step %d: mse=%.6g", step + 1, loss_value)
    _LOGGER.info(f"Fitted conditional MLP on {re.shape[0]} samples, final mse {loss_value:.6g}")
    return mlp


def _fingerprint(model: GmvaeModel) -> str:
    return hashlib.sha256(model_to_bytes(model)).hexdigest()


def train_cond(model: GmvaeModel, dataset, config: CondConfig, rng: Rng | None = None) -> CondMlp:
    """Regress posterior means on Re while the GMVAE stays untouched."""
    before = _fingerprint(model)
    matrix = dataset.matrix()
    if matrix.shape[1] != model.n_features:
        raise ContractViolation(
            f"dataset has {matrix.shape[1]} features, model expects {model.n_features}"
        )
    targets, _ = posterior_means(model, matrix)
    mlp = fit_cond_mlp(dataset.re, targets, config, rng)
    if _fingerprint(model) != before:
        raise FreezeViolation("GMVAE parameters changed while fitting the conditional model")
    return mlp


def generate_for_re(mlp: CondMlp, model: GmvaeModel, re: float) -> np.ndarray:
    if not mlp.re_min <= re <= mlp.re_max:
        _LOGGER.warning(f"Re={re:g} lies outside the training range [{mlp.re_min:g}, {mlp.re_max:g}]")
    z = mlp.predict([re])
    return decode(model, z).mean.value.reshape(model.field_shape)


# ---------------------------------------------------------------------------
# Container sections
# ---------------------------------------------------------------------------

def cond_sections(mlp: CondMlp) -> dict[str, np.ndarray]:
    sections = {f"{SECTION_PREFIX}{name}": value for name, value in mlp.params.arrays().items()}
    sections[NORMALIZATION_SECTION] = np.array([mlp.re_mean, mlp.re_std, mlp.re_min, mlp.re_max])
    return sections


def cond_from_sections(sections: dict[str, np.ndarray]) -> CondMlp:
    if NORMALIZATION_SECTION not in sections:
        raise ContractViolation("Model container holds no conditional network")
    params = ParamSet()
    for name, value in sections.items():
        if name.startswith(SECTION_PREFIX) and name != NORMALIZATION_SECTION:
            params.add(name[len(SECTION_PREFIX):], value)
    mean, std, low, high = (float(v) for v in sections[NORMALIZATION_SECTION])
    return CondMlp(params=params, re_mean=mean, re_std=std, re_min=low, re_max=high)


def save_bundle(path: str | Path, model: GmvaeModel, mlp: CondMlp) -> None:
    save_model(path, model, extra=cond_sections(mlp))


def load_bundle(path: str | Path) -> tuple[GmvaeModel, CondMlp]:
    model, extra = load_model(path)
    return model, cond_from_sections(extra)
