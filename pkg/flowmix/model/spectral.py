"""Graph-spectral smoothness of a per-sample quantity over an embedding.

A k-NN graph is built on 2-D points, its Laplacian eigenvectors act as a
Fourier basis ordered from smooth to rough, and the score is the share of
the centred signal's energy held by the smoothest ``alpha`` fraction of
modes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import StrEnum
import logging
import math
from pathlib import Path

import numpy as np

from .. import const
from ..exceptions import ContractViolation
from .numkit import Rng, pca, sym_eig

_LOGGER = logging.getLogger(__name__)

REPORT_HEADER = ("mode", "eigenvalue", "energy")


class LaplacianKind(StrEnum):
    UNNORMALIZED = "unnormalized"
    SYMMETRIC = "symmetric"


@dataclass(frozen=True)
class KnnGraph:
    n: int
    k: int
    adjacency: np.ndarray

    @property
    def edges(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(rows.tolist(), cols.tolist()))

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)


@dataclass(frozen=True, kw_only=True)
class SpectralReport:
    eigenvalues: np.ndarray
    energy_per_mode: np.ndarray
    score: float
    m: int
    k: int
    alpha: float

    @property
    def n(self) -> int:
        return len(self.eigenvalues)


# ---------------------------------------------------------------------------
# Graph
# ---------------------------------------------------------------------------

def knn_graph(points, k: int) -> KnnGraph:
    """Union-symmetrised k-nearest-neighbour graph, ties to the lower index."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ContractViolation(f"knn_graph needs an N x d array, got shape {x.shape}")
    n = x.shape[0]
    if not 1 <= k < n:
        raise ContractViolation(f"knn_graph needs 1 <= k < N, got k={k}, N={n}")

    distances = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    adjacency = np.zeros((n, n), dtype=np.int8)
    for i in range(n):
        row = distances[i].copy()
        row[i] = np.inf
        neighbours = np.argsort(row, kind="stable")[:k]
        adjacency[i, neighbours] = 1
    adjacency = np.maximum(adjacency, adjacency.T)
    return KnnGraph(n=n, k=k, adjacency=adjacency)


def laplacian(graph: KnnGraph, kind: LaplacianKind = LaplacianKind.UNNORMALIZED) -> np.ndarray:
    w = graph.adjacency.astype(np.float64)
    degree = w.sum(axis=1)
    if LaplacianKind(kind) is LaplacianKind.UNNORMALIZED:
        return np.diag(degree) - w
    scale = 1.0 / np.sqrt(degree)
    return np.eye(graph.n) - scale[:, None] * w * scale[None, :]


def graph_spectrum(
    points,
    k: int,
    kind: LaplacianKind = LaplacianKind.UNNORMALIZED,
) -> tuple[np.ndarray, np.ndarray]:
    return sym_eig(laplacian(knn_graph(points, k), kind))


# ---------------------------------------------------------------------------
# Score
# ---------------------------------------------------------------------------

def _included_modes(eigenvalues: np.ndarray, alpha: float) -> int:
    n = len(eigenvalues)
    m = min(n, max(1, math.ceil(round(alpha * n, 9))))
    while m < n and abs(eigenvalues[m] - eigenvalues[m - 1]) <= const.EIGEN_TIE_TOL:
        m += 1
    return m


def spectral_energy(
    eigenvalues: np.ndarray,
    eigenvectors: np.ndarray,
    f,
    alpha: float,
    k: int,
) -> SpectralReport:
    """Project the centred signal on a precomputed eigenbasis."""
    if not 0 < alpha <= 1:
        raise ContractViolation(f"alpha must lie in (0, 1], got {alpha}")
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    n = len(eigenvalues)
    if f.shape[0] != n:
        raise ContractViolation(f"signal has {f.shape[0]} values for {n} graph nodes")
    if not np.all(np.isfinite(f)):
        raise ContractViolation("signal contains non-finite values")

    m = _included_modes(eigenvalues, alpha)
    centred = f - f.mean()
    norm_sq = float(centred @ centred)
    if norm_sq == 0.0:
        energy = np.zeros(n)
        energy[0] = 1.0
        score = 1.0
    else:
        energy = (eigenvectors.T @ centred) ** 2 / norm_sq
        score = 1.0 if m == n else float(np.clip(energy[:m].sum(), 0.0, 1.0))
    _LOGGER.debug("Spectral score %.6f over %d/%d modes (k=%d, alpha=%g)", score, m, n, k, alpha)
    return SpectralReport(
        eigenvalues=np.asarray(eigenvalues, dtype=np.float64),
        energy_per_mode=energy,
        score=score,
        m=m,
        k=k,
        alpha=float(alpha),
    )


def smoothness_score(
    points,
    f,
    k: int = const.KNN_K,
    alpha: float = const.ALPHA,
    kind: LaplacianKind = LaplacianKind.UNNORMALIZED,
) -> SpectralReport:
    if not 0 < alpha <= 1:
        raise ContractViolation(f"alpha must lie in (0, 1], got {alpha}")
    eigenvalues, eigenvectors = graph_spectrum(points, k, kind)
    return spectral_energy(eigenvalues, eigenvectors, f, alpha, k)


def interpretability_of_embedding(
    embeddings,
    f,
    k: int = const.KNN_K,
    alpha: float = const.ALPHA,
    kind: LaplacianKind = LaplacianKind.UNNORMALIZED,
) -> SpectralReport:
    """Score on the 2-D PCA projection of the latent means."""
    projected = pca(np.asarray(embeddings, dtype=np.float64), 2).projected
    return smoothness_score(projected, f, k, alpha, kind)


def permutation_null(
    points,
    f,
    k: int = const.KNN_K,
    alpha: float = const.ALPHA,
    n_shuffles: int = 100,
    rng: Rng | None = None,
    kind: LaplacianKind = LaplacianKind.UNNORMALIZED,
) -> np.ndarray:
    """Scores of ``n_shuffles`` random permutations of ``f`` on one graph."""
    rng = rng if rng is not None else Rng(0)
    f = np.asarray(f, dtype=np.float64)
    eigenvalues, eigenvectors = graph_spectrum(points, k, kind)
    scores = np.empty(n_shuffles)
    for i in range(n_shuffles):
        shuffled = f[rng.child(i).permutation(len(f))]
        scores[i] = spectral_energy(eigenvalues, eigenvectors, shuffled, alpha, k).score
    return scores


def cluster_spread_ratio(values, labels) -> float:
    """Mean within-cluster standard deviation over the global one."""
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels)
    overall = float(values.std())
    if overall == 0.0:
        return 0.0
    within = [float(values[labels == c].std()) for c in np.unique(labels)]
    return float(np.mean(within)) / overall


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def write_report_csv(report: SpectralReport, path: str | Path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for mode, (value, energy) in enumerate(zip(report.eigenvalues, report.energy_per_mode)):
            writer.writerow((mode, repr(float(value)), repr(float(energy))))
    _LOGGER.info(f"Wrote spectral report ({report.n} modes) to {path}")


def summary_line(report: SpectralReport) -> str:
    return f"score={report.score:.6f} m={report.m} k={report.k} alpha={report.alpha:g}"
