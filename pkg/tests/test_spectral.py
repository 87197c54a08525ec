"""Tests for flowmix.model.spectral"""

import math

import numpy as np
import pytest

from flowmix.exceptions import ContractViolation
from flowmix.model.numkit import Rng, pca
from flowmix.model.spectral import (
    LaplacianKind,
    cluster_spread_ratio,
    graph_spectrum,
    interpretability_of_embedding,
    knn_graph,
    laplacian,
    permutation_null,
    smoothness_score,
    spectral_energy,
    summary_line,
    write_report_csv,
)


def _line(n: int) -> np.ndarray:
    return np.column_stack([np.arange(n, dtype=np.float64), np.zeros(n)])


def _path_eigenvector(n: int, j: int) -> np.ndarray:
    """Closed-form eigenvector j of the path-graph Laplacian on n nodes."""
    u = np.cos(math.pi * j * (np.arange(n) + 0.5) / n)
    return u / np.linalg.norm(u)


# ── knn_graph ─────────────────────────────────────────────────────────

class TestKnnGraph:

    def test_three_collinear_points(self):
        graph = knn_graph(_line(3), 1)
        assert graph.edges == [(0, 1), (1, 2)]

    def test_complete_graph(self, np_rng):
        graph = knn_graph(np_rng.normal(size=(5, 2)), 4)
        np.testing.assert_array_equal(graph.adjacency, np.ones((5, 5)) - np.eye(5))

    def test_matches_brute_force(self, np_rng):
        points = np_rng.normal(size=(10, 2))
        expected = np.zeros((10, 10), dtype=np.int8)
        for i in range(10):
            ranked = sorted(
                (float(np.sum((points[i] - points[j]) ** 2)), j) for j in range(10) if j != i
            )
            for _, j in ranked[:3]:
                expected[i, j] = expected[j, i] = 1
        np.testing.assert_array_equal(knn_graph(points, 3).adjacency, expected)

    def test_invariants(self, np_rng):
        graph = knn_graph(np_rng.normal(size=(15, 2)), 3)
        assert np.all(np.diag(graph.adjacency) == 0)
        np.testing.assert_array_equal(graph.adjacency, graph.adjacency.T)
        assert np.all(graph.degrees >= 3)

    def test_duplicate_points_tie_by_index(self):
        points = np.array([[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [5.0, 5.0]])
        graph = knn_graph(points, 1)
        assert graph.edges == [(0, 1), (0, 2), (0, 3)]

    @pytest.mark.parametrize("k", [0, 4, 5])
    def test_k_out_of_range(self, k):
        with pytest.raises(ContractViolation):
            knn_graph(_line(4), k)

    def test_needs_matrix(self):
        with pytest.raises(ContractViolation):
            knn_graph(np.arange(5.0), 1)


# ── laplacian ─────────────────────────────────────────────────────────

class TestLaplacian:

    def test_path(self):
        expected = [[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]]
        np.testing.assert_array_equal(laplacian(knn_graph(_line(3), 1)), expected)

    def test_complete_triangle(self):
        points = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.8]])
        expected = [[2.0, -1.0, -1.0], [-1.0, 2.0, -1.0], [-1.0, -1.0, 2.0]]
        np.testing.assert_array_equal(laplacian(knn_graph(points, 2)), expected)

    def test_quadratic_form_is_edge_sum(self, np_rng):
        graph = knn_graph(np_rng.normal(size=(20, 2)), 4)
        x = np_rng.normal(size=20)
        edge_sum = sum((x[i] - x[j]) ** 2 for i, j in graph.edges)
        assert x @ laplacian(graph) @ x == pytest.approx(edge_sum, abs=1e-10)

    def test_row_sums_and_semidefinite(self, np_rng):
        lap = laplacian(knn_graph(np_rng.normal(size=(12, 2)), 3))
        np.testing.assert_allclose(lap.sum(axis=1), 0.0, atol=1e-12)
        values, _ = graph_spectrum(np_rng.normal(size=(12, 2)), 3)
        assert values[0] == pytest.approx(0.0, abs=1e-9)
        assert np.all(values >= -1e-9)

    def test_symmetric_variant(self, np_rng):
        graph = knn_graph(np_rng.normal(size=(12, 2)), 3)
        lap = laplacian(graph, LaplacianKind.SYMMETRIC)
        np.testing.assert_allclose(np.diag(lap), 1.0)
        values, _ = graph_spectrum(np_rng.normal(size=(12, 2)), 3, "symmetric")
        assert values[0] == pytest.approx(0.0, abs=1e-9)
        assert values[-1] <= 2.0 + 1e-9


# ── smoothness_score ──────────────────────────────────────────────────

class TestSmoothnessScore:

    def test_constant_signal(self, np_rng):
        report = smoothness_score(np_rng.normal(size=(8, 2)), np.full(8, 3.5), k=2, alpha=0.25)
        assert report.score == 1.0
        assert report.energy_per_mode[0] == 1.0

    def test_single_mode_signal(self):
        points = _line(6)
        _, vectors = graph_spectrum(points, 1)
        report = smoothness_score(points, vectors[:, 1], k=1, alpha=2 / 6)
        assert report.m == 2
        assert report.score == pytest.approx(1.0, abs=1e-9)

    def test_equal_mix_on_four_node_path(self):
        f = _path_eigenvector(4, 1) + _path_eigenvector(4, 3)
        report = smoothness_score(_line(4), f, k=1, alpha=0.5)
        assert report.m == 2
        assert report.score == pytest.approx(0.5, abs=1e-9)
        np.testing.assert_allclose(
            report.eigenvalues, [2 - 2 * math.cos(math.pi * j / 4) for j in range(4)], atol=1e-10
        )

    def test_full_alpha(self, np_rng):
        report = smoothness_score(np_rng.normal(size=(10, 2)), np_rng.normal(size=10), k=3, alpha=1.0)
        assert report.m == 10
        assert report.score == 1.0

    def test_tied_eigenspace_is_completed(self):
        square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        report = smoothness_score(square, [1.0, 2.0, 0.0, 5.0], k=2, alpha=0.5)
        np.testing.assert_allclose(report.eigenvalues, [0.0, 2.0, 2.0, 4.0], atol=1e-10)
        assert report.m == 3

    def test_energy_conservation(self, np_rng):
        report = smoothness_score(np_rng.normal(size=(25, 2)), np_rng.normal(size=25), k=4, alpha=0.2)
        assert report.energy_per_mode.sum() == pytest.approx(1.0, abs=1e-9)
        assert 0.0 <= report.score <= 1.0

    def test_monotone_in_alpha(self, np_rng):
        points = np_rng.normal(size=(30, 2))
        f = np_rng.normal(size=30)
        scores = [smoothness_score(points, f, k=5, alpha=a).score for a in (0.05, 0.1, 0.3, 0.6, 1.0)]
        assert scores == sorted(scores)

    def test_rigid_motion_and_scaling(self, np_rng):
        points = np_rng.normal(size=(20, 2))
        f = np_rng.normal(size=20)
        angle = 0.7
        rotation = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        moved = 3.0 * points @ rotation.T + np.array([10.0, -4.0])
        before = smoothness_score(points, f, k=4, alpha=0.2).score
        after = smoothness_score(moved, f, k=4, alpha=0.2).score
        assert after == pytest.approx(before, abs=1e-9)

    def test_affine_signal(self, np_rng):
        points = np_rng.normal(size=(20, 2))
        f = np_rng.normal(size=20)
        before = smoothness_score(points, f, k=4, alpha=0.2).score
        after = smoothness_score(points, -3.0 * f + 7.0, k=4, alpha=0.2).score
        assert after == pytest.approx(before, abs=1e-12)

    @pytest.mark.parametrize("alpha", [0.0, -0.1, 1.5])
    def test_alpha_out_of_range(self, alpha):
        with pytest.raises(ContractViolation):
            smoothness_score(_line(5), np.arange(5.0), k=1, alpha=alpha)

    def test_k_too_large(self):
        with pytest.raises(ContractViolation):
            smoothness_score(_line(5), np.arange(5.0), k=5, alpha=0.5)

    def test_signal_length_mismatch(self):
        values, vectors = graph_spectrum(_line(5), 1)
        with pytest.raises(ContractViolation):
            spectral_energy(values, vectors, np.arange(4.0), 0.5, 1)

    def test_non_finite_signal(self):
        with pytest.raises(ContractViolation):
            smoothness_score(_line(5), [0.0, 1.0, np.nan, 3.0, 4.0], k=1, alpha=0.5)


# ── embedding score and null ──────────────────────────────────────────

class TestInterpretability:

    def test_two_dimensional_input_unchanged(self, np_rng):
        points = np_rng.normal(size=(15, 2)) * [3.0, 1.0]
        f = np_rng.normal(size=15)
        direct = smoothness_score(points, f, k=3, alpha=0.2).score
        assert interpretability_of_embedding(points, f, k=3, alpha=0.2).score == pytest.approx(direct, abs=1e-9)

    def test_composition(self, np_rng):
        embeddings = np_rng.normal(size=(12, 5))
        f = np_rng.normal(size=12)
        projected = pca(embeddings, 2).projected
        values, vectors = graph_spectrum(projected, 3)
        manual = spectral_energy(values, vectors, f, 0.25, 3)
        report = interpretability_of_embedding(embeddings, f, k=3, alpha=0.25)
        assert report.score == manual.score
        assert report.m == manual.m

    def test_beats_permutation_null_on_a_line(self, np_rng):
        points = np.column_stack([np.linspace(0.0, 1.0, 60), 1e-4 * np_rng.normal(size=60)])
        projected = pca(points, 2).projected
        f = projected[:, 0]
        score = interpretability_of_embedding(points, f, k=4, alpha=0.05).score
        null = permutation_null(projected, f, k=4, alpha=0.05, n_shuffles=100, rng=Rng(0))
        assert score > 0.9
        assert np.all(score >= null)

    def test_null_is_deterministic(self, np_rng):
        points = np_rng.normal(size=(15, 2))
        f = np_rng.normal(size=15)
        a = permutation_null(points, f, k=3, alpha=0.2, n_shuffles=5, rng=Rng(3))
        b = permutation_null(points, f, k=3, alpha=0.2, n_shuffles=5, rng=Rng(3))
        np.testing.assert_array_equal(a, b)
        assert permutation_null(points, f, k=3, alpha=0.2, n_shuffles=0).shape == (0,)


class TestClusterSpread:

    def test_perfect_separation(self):
        assert cluster_spread_ratio([1.0, 1.0, 9.0, 9.0], [0, 0, 1, 1]) == 0.0

    def test_single_cluster(self, np_rng):
        values = np_rng.normal(size=10)
        assert cluster_spread_ratio(values, np.zeros(10)) == pytest.approx(1.0)

    def test_constant_values(self):
        assert cluster_spread_ratio([2.0, 2.0, 2.0], [0, 1, 1]) == 0.0


# ── output ────────────────────────────────────────────────────────────

class TestReportOutput:

    def test_csv(self, tmp_path):
        report = smoothness_score(_line(4), [0.0, 1.0, 2.0, 3.0], k=1, alpha=0.5)
        path = tmp_path / "report.csv"
        write_report_csv(report, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "mode,eigenvalue,energy"
        assert len(lines) == 5
        mode, eigenvalue, energy = lines[2].split(",")
        assert mode == "1"
        assert float(eigenvalue) == report.eigenvalues[1]
        assert float(energy) == report.energy_per_mode[1]

    def test_summary_line(self):
        report = smoothness_score(_line(4), np.ones(4), k=1, alpha=0.5)
        assert summary_line(report) == "score=1.000000 m=2 k=1 alpha=0.5"
