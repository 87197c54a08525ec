"""Numeric kernels: seedable PRNG, Jacobi eigensolver, PCA and k-means.

Arrays are plain ``numpy.ndarray`` objects. The kernels are written out
rather than delegated to ``numpy.linalg`` / ``numpy.random`` because their
ordering, sign and stream conventions are part of the public contract.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
import math

import numpy as np

from ..exceptions import ContractViolation, ConvergenceError

_LOGGER = logging.getLogger(__name__)

Tensor = np.ndarray

MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_TWO_POW_MINUS_53 = 1.0 / (1 << 53)

JACOBI_MAX_SWEEPS = 100


# ---------------------------------------------------------------------------
# Random numbers
# ---------------------------------------------------------------------------

def mix64(z: int) -> int:
    """splitmix64 finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Rng:
    """xoshiro256** generator seeded through splitmix64.

    The generator is single-owner. Parallel work takes a ``child`` stream,
    whose seed is ``mix64(seed ^ index)``.
    """

    def __init__(self, seed: int) -> None:
        self.seed = int(seed) & MASK64
        state = self.seed
        words = []
        for _ in range(4):
            state = (state + _GOLDEN_GAMMA) & MASK64
            words.append(mix64(state))
        self._s = words

    def child(self, index: int) -> Rng:
        return Rng(mix64(self.seed ^ (int(index) & MASK64)))

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def _u64_block(self, count: int) -> list[int]:
        s0, s1, s2, s3 = self._s
        out = [0] * count
        for i in range(count):
            out[i] = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
            t = (s1 << 17) & MASK64
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & MASK64
        self._s = [s0, s1, s2, s3]
        return out

    def uniform(self, size: int | tuple[int, ...] | None = None) -> float | np.ndarray:
        """Uniform draws on [0, 1) with 53 bits of resolution."""
        if size is None:
            return (self.next_u64() >> 11) * _TWO_POW_MINUS_53
        shape = (size,) if isinstance(size, int) else tuple(size)
        count = math.prod(shape)
        block = np.array(self._u64_block(count), dtype=np.uint64)
        return ((block >> np.uint64(11)).astype(np.float64) * _TWO_POW_MINUS_53).reshape(shape)

    def normal(self, size: int | tuple[int, ...] | None = None) -> float | np.ndarray:
        """Standard normal draws via Box-Muller, both outputs of every pair used."""
        if size is None:
            return float(self.normal(1)[0])
        shape = (size,) if isinstance(size, int) else tuple(size)
        count = math.prod(shape)
        pairs = (count + 1) // 2
        u = self.uniform(2 * pairs)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[0::2]))
        angle = 2.0 * math.pi * u[1::2]
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:count].reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        order = np.arange(n)
        if n < 2:
            return order
        u = self.uniform(n - 1)
        for step, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[step] * (i + 1))
            order[i], order[j] = order[j], order[i]
        return order


# ---------------------------------------------------------------------------
# Symmetric eigensolver
# ---------------------------------------------------------------------------

def sym_eig(m: Tensor, tol: float = 1e-10, max_sweeps: int = JACOBI_MAX_SWEEPS) -> tuple[Tensor, Tensor]:
    """Eigen-decompose a symmetric matrix with cyclic Jacobi rotations.

    Returns eigenvalues in ascending order (ties keep the original diagonal
    position order) and the matching column-orthonormal eigenvectors.
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ContractViolation(f"sym_eig needs a non-empty square matrix, got shape {a.shape}")
    scale = float(np.max(np.abs(a)))
    if float(np.max(np.abs(a - a.T))) > tol * max(1.0, scale):
        raise ContractViolation("sym_eig input is not symmetric")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)

    frobenius = float(np.linalg.norm(a))
    target = 1e-14 * frobenius
    for sweep in range(max_sweeps + 1):
        off = float(np.linalg.norm(a - np.diag(np.diag(a))))
        if off <= target or frobenius == 0.0:
            _LOGGER.debug("Jacobi converged after %d sweeps (n=%d)", sweep, n)
            break
        if sweep == max_sweeps:
            raise ConvergenceError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app, aqq = a[p, p], a[q, q]
                if abs(apq) < 1e-300 or abs(apq) <= 1e-18 * (abs(app) + abs(aqq)):
                    a[p, q] = a[q, p] = 0.0
                    continue
                theta = (aqq - app) / (2.0 * apq)
                t = (1.0 if theta >= 0.0 else -1.0) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c

                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0

                vec_p = v[:, p].copy()
                vec_q = v[:, q]
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q

    eigenvalues = np.diag(a).copy()
    order = np.argsort(eigenvalues, kind="stable")
    return eigenvalues[order], v[:, order]


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass(frozen=True, kw_only=True)
class PcaResult:
    """Projection of centered points onto their leading principal axes."""

    projected: Tensor
    components: Tensor
    explained_variance: Tensor
    mean: Tensor
    padded: bool = False

    def __iter__(self):
        return iter((self.projected, self.components, self.explained_variance))

    def transform(self, points: Tensor) -> Tensor:
        return (np.asarray(points, dtype=np.float64) - self.mean) @ self.components


def pca(points: Tensor, out_dim: int) -> PcaResult:
    """Principal component analysis through the covariance eigendecomposition.

    Components are ordered by non-increasing variance and their signs are
    fixed so that the largest-magnitude entry of each component is positive.
    Requests beyond the data rank are padded with zero-variance components
    and flagged through ``padded``.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ContractViolation(f"pca needs an N x D array with N >= 2, got shape {x.shape}")
    if out_dim < 1:
        raise ContractViolation("pca out_dim must be positive")
    n, d = x.shape
    mean = x.mean(axis=0)
    centered = x - mean
    covariance = centered.T @ centered / (n - 1)
    values, vectors = sym_eig(covariance)
    order = np.argsort(-values, kind="stable")
    values = np.clip(values[order], 0.0, None)
    vectors = vectors[:, order]

    for j in range(d):
        pivot = int(np.argmax(np.abs(vectors[:, j])))
        if vectors[pivot, j] < 0:
            vectors[:, j] = -vectors[:, j]

    rank = min(n - 1, d)
    keep = min(out_dim, d)
    components = np.zeros((d, out_dim))
    explained = np.zeros(out_dim)
    components[:, :keep] = vectors[:, :keep]
    explained[:keep] = values[:keep]
    padded = out_dim > rank
    if padded:
        explained[rank:] = 0.0
        _LOGGER.warning(f"PCA asked for {out_dim} components but the data rank is at most {rank}; padding")

    return PcaResult(
        projected=centered @ components,
        components=components,
        explained_variance=explained,
        mean=mean,
        padded=padded,
    )


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

def _squared_distances(points: Tensor, centroids: Tensor) -> Tensor:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.sum(diff * diff, axis=-1)


def inertia(points: Tensor, centroids: Tensor, labels: Tensor) -> float:
    """Total within-cluster squared distance."""
    diff = np.asarray(points, dtype=np.float64) - np.asarray(centroids)[np.asarray(labels)]
    return float(np.sum(diff * diff))


def _kmeans_plus_plus(points: Tensor, k: int, rng: Rng) -> Tensor:
    n = points.shape[0]
    chosen = [min(int(rng.uniform() * n), n - 1)]
    closest = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = float(closest.sum())
        if total <= 0.0:
            index = min(int(rng.uniform() * n), n - 1)
        else:
            target = rng.uniform() * total
            index = int(np.searchsorted(np.cumsum(closest), target, side="right"))
            index = min(index, n - 1)
        chosen.append(index)
        closest = np.minimum(closest, np.sum((points - points[index]) ** 2, axis=1))
    return points[chosen].copy()


def kmeans(points: Tensor, k: int, rng: Rng, max_iter: int = 100) -> tuple[Tensor, Tensor]:
    """Lloyd's algorithm with k-means++ seeding.

    Returns ``(centroids, labels)``. A cluster that loses all of its points
    is re-seeded at the point farthest from its nearest centroid.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ContractViolation(f"kmeans needs an N x D array, got shape {x.shape}")
    n = x.shape[0]
    if k < 1 or n < k:
        raise ContractViolation(f"kmeans needs 1 <= k <= N, got k={k}, N={n}")

    centroids = _kmeans_plus_plus(x, k, rng)
    labels = np.full(n, -1, dtype=np.int64)
    for iteration in range(max_iter):
        distances = _squared_distances(x, centroids)
        new_labels = np.argmin(distances, axis=1)

        for cluster in range(k):
            counts = np.bincount(new_labels, minlength=k)
            if counts[cluster]:
                continue
            # only take points from clusters that keep at least one member
            nearest = np.where(counts[new_labels] > 1, distances[np.arange(n), new_labels], -np.inf)
            far = int(np.argmax(nearest))
            _LOGGER.debug(f"k-means cluster {cluster} emptied; re-seeding at point {far}")
            centroids[cluster] = x[far]
            new_labels[far] = cluster

        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for cluster in range(k):
            centroids[cluster] = x[labels == cluster].mean(axis=0)
        _LOGGER.debug("k-means iteration %d inertia %.6g", iteration, inertia(x, centroids, labels))

    return centroids, labels
