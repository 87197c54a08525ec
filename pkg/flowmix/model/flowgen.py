"""Synthetic parametric flow fields and the GMVF dataset container.

Kovasznay flow is an exact steady Navier-Stokes solution with a genuine
Reynolds-number dependence::

    lambda = Re / 2 - sqrt(Re^2 / 4 + 4 pi^2)
    u = 1 - exp(lambda x) cos(2 pi y)
    v = lambda / (2 pi) exp(lambda x) sin(2 pi y)
    p = (1 - exp(2 lambda x)) / 2

Fields are sampled at cell centres of x in [-0.5, 1.0], y in [-0.5, 1.5] and
stored as (channel, y, x) arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from pathlib import Path
import struct
from typing import Iterator

import numpy as np

from .. import const
from ..config import GENERATE_SCHEMA, validate
from ..exceptions import ContractViolation, FormatError
from .codec import Reader
from .numkit import Rng

_LOGGER = logging.getLogger(__name__)

X_RANGE = (-0.5, 1.0)
Y_RANGE = (-0.5, 1.5)

_HEADER = struct.Struct("<4sIIIII")
HEADER_SIZE = _HEADER.size


@dataclass(frozen=True)
class FlowSample:
    re: float
    field: np.ndarray


@dataclass
class FlowDataset:
    """n fields of shape 3 x H x W with their Reynolds numbers.

    ``noise_sigma`` holds the per-channel noise standard deviation that was
    applied; it is NaN when unknown (datasets read back from GMVF files).
    """

    re: np.ndarray
    fields: np.ndarray
    noise_sigma: np.ndarray = field(default_factory=lambda: np.full(len(const.CHANNELS), np.nan))

    def __post_init__(self) -> None:
        self.re = np.asarray(self.re, dtype=np.float64).reshape(-1)
        self.fields = np.asarray(self.fields, dtype=np.float32)
        if self.fields.ndim != 4 or self.fields.shape[1] != len(const.CHANNELS):
            raise ContractViolation(f"FlowDataset fields must be n x 3 x H x W, got {self.fields.shape}")
        if self.fields.shape[0] != self.re.shape[0]:
            raise ContractViolation("FlowDataset needs one Reynolds number per field")
        self.noise_sigma = np.asarray(self.noise_sigma, dtype=np.float64)

    def __len__(self) -> int:
        return self.re.shape[0]

    def __iter__(self) -> Iterator[FlowSample]:
        return (self[i] for i in range(len(self)))

    def __getitem__(self, index: int) -> FlowSample:
        return FlowSample(re=float(self.re[index]), field=self.fields[index])

    @property
    def height(self) -> int:
        return self.fields.shape[2]

    @property
    def width(self) -> int:
        return self.fields.shape[3]

    @property
    def n_features(self) -> int:
        return int(np.prod(self.fields.shape[1:]))

    @property
    def samples(self) -> list[FlowSample]:
        return list(self)

    def matrix(self) -> np.ndarray:
        """n x P float64 design matrix of flattened fields."""
        return self.fields.reshape(len(self), self.n_features).astype(np.float64)

    @classmethod
    def empty(cls, height: int, width: int) -> FlowDataset:
        return cls(re=np.zeros(0), fields=np.zeros((0, len(const.CHANNELS), height, width)))


# ---------------------------------------------------------------------------
# Closed form
# ---------------------------------------------------------------------------

def kovasznay_lambda(re: float) -> float:
    return re / 2.0 - math.sqrt(re * re / 4.0 + 4.0 * math.pi ** 2)


def kovasznay_point(re: float, x, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(u, v, p) at arbitrary coordinates."""
    lam = kovasznay_lambda(re)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    decay = np.exp(lam * x)
    u = 1.0 - decay * np.cos(2.0 * np.pi * y)
    v = lam / (2.0 * np.pi) * decay * np.sin(2.0 * np.pi * y)
    p = 0.5 * (1.0 - np.exp(2.0 * lam * x))
    return u, v, p


def grid_coordinates(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell-centre coordinates as (H, W) arrays ``(x, y)``."""
    dx = (X_RANGE[1] - X_RANGE[0]) / width
    dy = (Y_RANGE[1] - Y_RANGE[0]) / height
    xs = X_RANGE[0] + (np.arange(width) + 0.5) * dx
    ys = Y_RANGE[0] + (np.arange(height) + 0.5) * dy
    return np.meshgrid(xs, ys, indexing="xy")


def kovasznay_field(re: float, height: int, width: int) -> np.ndarray:
    if re <= 0:
        raise ContractViolation(f"Reynolds number must be positive, got {re}")
    if height < 2 or width < 2:
        raise ContractViolation("kovasznay_field needs H, W >= 2")
    x, y = grid_coordinates(height, width)
    return np.stack(kovasznay_point(re, x, y))


def clean_fields(dataset: FlowDataset) -> np.ndarray:
    """Noise-free float64 fields for the dataset's Reynolds numbers."""
    out = np.empty((len(dataset), len(const.CHANNELS), dataset.height, dataset.width))
    for i, re in enumerate(dataset.re):
        out[i] = kovasznay_field(float(re), dataset.height, dataset.width)
    return out


def generate(
    n: int,
    re_min: float = const.RE_MIN,
    re_max: float = const.RE_MAX,
    height: int = const.GRID,
    width: int = const.GRID,
    noise_frac: float = const.NOISE_FRAC,
    seed: int = 0,
) -> FlowDataset:
    """Draw Re uniformly, evaluate the closed form and add Gaussian noise.

    Re comes from child stream 0, the noise of sample i from child stream
    1 + i. The noise level per channel is ``noise_frac`` times the RMS of
    that channel over the clean dataset.
    """
    options = validate(
        GENERATE_SCHEMA,
        {"n": n, "re_min": re_min, "re_max": re_max, "height": height, "width": width,
         "noise_frac": noise_frac, "seed": seed},
        "dataset options",
    )
    rng = Rng(seed)
    re = options["re_min"] + (options["re_max"] - options["re_min"]) * rng.child(0).uniform(n)
    clean = np.empty((n, len(const.CHANNELS), height, width))
    for i in range(n):
        clean[i] = kovasznay_field(float(re[i]), height, width)

    rms = np.sqrt(np.mean(clean ** 2, axis=(0, 2, 3)))
    sigma = options["noise_frac"] * rms
    if options["noise_frac"] > 0:
        for i in range(n):
            clean[i] += sigma[:, None, None] * rng.child(1 + i).normal(clean[i].shape)
    _LOGGER.info(
        "Generated %d Kovasznay samples on a %dx%d grid, Re in [%g, %g], noise sigma %s",
        n, height, width, re_min, re_max, np.round(sigma, 6).tolist(),
    )
    return FlowDataset(re=re, fields=clean, noise_sigma=sigma)


# ---------------------------------------------------------------------------
# GMVF container
# ---------------------------------------------------------------------------

def to_bytes(dataset: FlowDataset) -> bytes:
    header = _HEADER.pack(
        const.DATASET_MAGIC,
        const.DATASET_VERSION,
        len(dataset),
        len(const.CHANNELS),
        dataset.height,
        dataset.width,
    )
    return b"".join((
        header,
        np.ascontiguousarray(dataset.re, dtype="<f8").tobytes(),
        np.ascontiguousarray(dataset.fields, dtype="<f4").tobytes(),
    ))


def from_bytes(payload: bytes) -> FlowDataset:
    reader = Reader(payload, "GMVF dataset")
    reader.header(const.DATASET_MAGIC, const.DATASET_VERSION)
    n, channels, height, width = (reader.u32() for _ in range(4))
    if channels != len(const.CHANNELS):
        raise FormatError(f"GMVF dataset: expected {len(const.CHANNELS)} channels, found {channels}")
    re = reader.array("<f8", n)
    fields = reader.array("<f4", n * channels * height * width).reshape(n, channels, height, width)
    if reader.remaining:
        raise FormatError(f"GMVF dataset: {reader.remaining} trailing bytes")
    return FlowDataset(re=re, fields=fields)


def save(path: str | Path, dataset: FlowDataset) -> None:
    Path(path).write_bytes(to_bytes(dataset))
    _LOGGER.info(f"Wrote {len(dataset)} samples to {path}")


def load(path: str | Path) -> FlowDataset:
    dataset = from_bytes(Path(path).read_bytes())
    _LOGGER.debug("Loaded %d samples (%dx%d) from %s", len(dataset), dataset.height, dataset.width, path)
    return dataset


def file_size(n: int, height: int, width: int) -> int:
    return HEADER_SIZE + 8 * n + 4 * n * len(const.CHANNELS) * height * width
