"""Per-sample embedding table: latent means, PCA coordinates and cluster labels."""

from __future__ import annotations

import csv
from dataclasses import dataclass
import logging
from pathlib import Path

import numpy as np

from .exceptions import ContractViolation, FormatError
from .model.flowgen import FlowDataset
from .model.gmvae import GmvaeModel, cluster_labels, posterior_means
from .model.numkit import pca

_LOGGER = logging.getLogger(__name__)

_FIXED_COLUMNS = frozenset({"id", "re", "pc1", "pc2", "cluster"})


@dataclass(frozen=True, kw_only=True)
class EmbeddingTable:
    ids: np.ndarray
    re: np.ndarray
    latent: np.ndarray
    log_var: np.ndarray | None
    pcs: np.ndarray
    cluster: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def latent_dim(self) -> int:
        return self.latent.shape[1]

    @property
    def header(self) -> list[str]:
        return ["id", "re", *(f"z{j + 1}" for j in range(self.latent_dim)), "pc1", "pc2", "cluster"]

    def column(self, name: str) -> np.ndarray:
        """A per-sample scalar column by its CSV name."""
        if name == "id":
            return self.ids.astype(np.float64)
        if name == "re":
            return self.re
        if name == "cluster":
            return self.cluster.astype(np.float64)
        if name in ("pc1", "pc2"):
            return self.pcs[:, int(name[-1]) - 1]
        if name.startswith("z") and name[1:].isdigit() and 1 <= int(name[1:]) <= self.latent_dim:
            return self.latent[:, int(name[1:]) - 1]
        raise ContractViolation(f"Unknown column {name!r}; available: {', '.join(self.header)}")

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(self.header)
            for i in range(len(self)):
                writer.writerow([
                    int(self.ids[i]),
                    repr(float(self.re[i])),
                    *(repr(float(v)) for v in self.latent[i]),
                    repr(float(self.pcs[i, 0])),
                    repr(float(self.pcs[i, 1])),
                    int(self.cluster[i]),
                ])
        _LOGGER.info(f"Wrote {len(self)} embedding rows to {path}")

    @classmethod
    def from_csv(cls, path: str | Path) -> EmbeddingTable:
        with open(path, newline="") as handle:
            rows = list(csv.reader(handle))
        if not rows:
            raise FormatError(f"{path}: empty embedding table")
        header, body = rows[0], rows[1:]
        latent_names = [name for name in header if name not in _FIXED_COLUMNS]
        expected = ["id", "re", *(f"z{j + 1}" for j in range(len(latent_names))), "pc1", "pc2", "cluster"]
        if header != expected:
            raise FormatError(f"{path}: unexpected header {header}")
        try:
            values = np.array(body, dtype=np.float64).reshape(len(body), len(header))
        except ValueError as err:
            _LOGGER.error("Could not parse embedding table %s: %s", path, err)
            raise FormatError(f"{path}: malformed embedding row") from err
        d = len(latent_names)
        return cls(
            ids=values[:, 0].astype(np.int64),
            re=values[:, 1],
            latent=values[:, 2:2 + d],
            log_var=None,
            pcs=values[:, 2 + d:4 + d],
            cluster=values[:, 4 + d].astype(np.int64),
        )


def project_2d(latent: np.ndarray) -> np.ndarray:
    """Two PCA coordinates of the latent means (zeros when N < 2)."""
    if latent.shape[0] < 2:
        return np.zeros((latent.shape[0], 2))
    return pca(latent, 2).projected


def embed_dataset(model: GmvaeModel, dataset: FlowDataset) -> EmbeddingTable:
    matrix = dataset.matrix()
    if matrix.shape[1] != model.n_features:
        raise ContractViolation(
            f"Dataset has {matrix.shape[1]} features per sample but the model expects {model.n_features}"
        )
    means, log_vars = posterior_means(model, matrix)
    return EmbeddingTable(
        ids=np.arange(len(dataset)),
        re=dataset.re.copy(),
        latent=means,
        log_var=log_vars,
        pcs=project_2d(means),
        cluster=cluster_labels(model.gmm, means),
    )
