"""Desk-scale experiment: train, embed, score against a shuffled-Re null."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
import logging
from pathlib import Path

import numpy as np

from . import const
from .embedding import EmbeddingTable, embed_dataset
from .model.flowgen import FlowDataset
from .model.gmvae import GmvaeModel
from .model.numkit import Rng
from .model.spectral import cluster_spread_ratio, permutation_null, smoothness_score
from .model.trainer import TrainConfig, TrainLog, train

_LOGGER = logging.getLogger(__name__)

SWEEP_HEADER = ("clusters", "score", "null_p95", "spread_ratio", "first_elbo", "final_elbo")

# child stream of the config seed reserved for the permutation null
NULL_STREAM = 7


@dataclass(frozen=True, kw_only=True)
class ProtocolResult:
    score: float
    null_scores: np.ndarray
    null_p95: float
    spread_ratio: float
    first_elbo: float
    final_elbo: float
    model: GmvaeModel
    log: TrainLog
    table: EmbeddingTable

    @property
    def beats_null(self) -> bool:
        return self.score > self.null_p95

    @property
    def stratified(self) -> bool:
        return self.spread_ratio < 0.5

    @property
    def improved(self) -> bool:
        return self.final_elbo > self.first_elbo

    def row(self, clusters: int) -> tuple:
        return (clusters, self.score, self.null_p95, self.spread_ratio, self.first_elbo, self.final_elbo)


def run_protocol(
    dataset: FlowDataset,
    config: TrainConfig,
    k: int = const.KNN_K,
    alpha: float = const.ALPHA,
    n_shuffles: int = 100,
) -> ProtocolResult:
    model, log = train(dataset, config)
    table = embed_dataset(model, dataset)
    report = smoothness_score(table.pcs, table.re, k, alpha)
    null = permutation_null(table.pcs, table.re, k, alpha, n_shuffles, Rng(config.seed).child(NULL_STREAM))
    result = ProtocolResult(
        score=report.score,
        null_scores=null,
        null_p95=float(np.percentile(null, 95)) if len(null) else float("nan"),
        spread_ratio=cluster_spread_ratio(table.re, table.cluster),
        first_elbo=log.records[0].elbo,
        final_elbo=log.records[-1].elbo,
        model=model,
        log=log,
        table=table,
    )
    _LOGGER.info(
        "Protocol K=%d: score=%.4f null_p95=%.4f spread=%.3f elbo %.2f -> %.2f",
        config.n_clusters, result.score, result.null_p95, result.spread_ratio,
        result.first_elbo, result.final_elbo,
    )
    return result


def cluster_sweep(
    dataset: FlowDataset,
    config: TrainConfig,
    cluster_counts=(4, 6, 8),
    k: int = const.KNN_K,
    alpha: float = const.ALPHA,
    n_shuffles: int = 100,
) -> dict[int, ProtocolResult]:
    """Repeat the protocol for several cluster counts with everything else fixed."""
    return {
        clusters: run_protocol(dataset, replace(config, n_clusters=clusters), k, alpha, n_shuffles)
        for clusters in cluster_counts
    }


def write_sweep_csv(results: dict[int, ProtocolResult], path: str | Path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SWEEP_HEADER)
        for clusters, result in results.items():
            writer.writerow([repr(v) if isinstance(v, float) else v for v in result.row(clusters)])
    _LOGGER.info(f"Wrote sweep over {len(results)} cluster counts to {path}")
