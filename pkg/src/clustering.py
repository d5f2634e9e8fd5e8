"""
Hard cluster assignment, Silhouette scoring and 2-D projection of the latent space.

Functions:
    assign_cluster       -- argmax of one probability vector, lowest index on ties
    assign_clusters      -- row-wise argmax of a probability matrix
    pairwise_distances   -- exact Euclidean distance matrix
    silhouette_score     -- per-point s(i), mean S_c and cluster sizes
    pca_project_2d       -- top-2 principal components by power iteration
    cluster_report       -- one row per point: projection, cluster, s(i), tag
    cluster_composition  -- tag counts per cluster
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist, squareform
from sklearn.metrics import silhouette_samples

from .errors import ContractError, SingleClusterError
from .models import LatentBatch, SilhouetteReport
from .tensor import make_rng

logger = logging.getLogger(__name__)


def assign_cluster(v_p) -> int:
    probs = np.asarray(getattr(v_p, 'data', v_p)).reshape(-1)
    if probs.size == 0:
        raise ContractError("cannot assign a cluster from an empty probability vector")
    return int(np.argmax(probs))


def assign_clusters(probs) -> np.ndarray:
    probs = np.asarray(getattr(probs, 'data', probs))
    if probs.ndim != 2 or probs.shape[1] == 0:
        raise ContractError(f"expected an M x n probability matrix, got shape {probs.shape}")
    return np.argmax(probs, axis=1)


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    return squareform(pdist(np.asarray(points, dtype=np.float64), metric='euclidean'))


def silhouette_score(batch: LatentBatch, distances: Optional[np.ndarray] = None) -> SilhouetteReport:
    """
    s(i) = (b - a) / max(a, b) over Euclidean distances, with s(i) = 0 for
    singleton clusters and when max(a, b) = 0. Raises SingleClusterError
    when fewer than two clusters are non-empty.
    """
    sizes = batch.sizes()
    if np.count_nonzero(sizes) < 2:
        raise SingleClusterError(f"{np.count_nonzero(sizes)} non-empty cluster(s); need at least 2")
    if distances is None:
        distances = pairwise_distances(batch.points)

    labels = batch.assignments
    if np.count_nonzero(sizes) == len(labels):
        values = np.zeros(len(labels))
    else:
        values = silhouette_samples(distances, labels, metric='precomputed')
    values = np.clip(values, -1.0, 1.0)
    return SilhouetteReport(values=values, mean=float(np.mean(values)), sizes=sizes)


@dataclass
class Projection:
    coords: np.ndarray        # [M, 2]
    components: np.ndarray    # [2, D]
    degenerate: bool


def _power_iteration(matrix: np.ndarray, start: np.ndarray, tol: float,
                     max_iter: int) -> Optional[np.ndarray]:
    if np.abs(matrix).max() <= 1e-300:
        return None
    v = start / np.linalg.norm(start)
    for _ in range(max_iter):
        w = matrix @ v
        norm = np.linalg.norm(w)
        if norm <= 1e-300:
            return None
        w = w / norm
        if np.linalg.norm(w - v) < tol:
            v = w
            break
        v = w
    return v


def _fix_sign(v: np.ndarray) -> np.ndarray:
    return -v if v[int(np.argmax(np.abs(v)))] < 0 else v


def pca_project_2d(points, tol: float = 1e-9, max_iter: int = 5000, seed: int = 0) -> Projection:
    """
    Mean-centred projection onto the top two covariance eigenvectors, found
    by power iteration with deflation. Each iteration starts from a seeded
    Gaussian vector, which is almost surely not orthogonal to the leading
    eigenvector. The two components are ordered by Rayleigh quotient and
    each is signed so that its largest-magnitude coordinate is positive.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise ContractError("pca_project_2d needs at least 2 points in an M x D matrix")
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / (len(X) - 1)
    rng = make_rng(seed)

    components = np.zeros((2, X.shape[1]))
    work = cov.copy()
    for k in range(min(2, X.shape[1])):
        v = _power_iteration(work, rng.normal(size=X.shape[1]), tol, max_iter)
        if v is None:
            break
        for prev in components[:k]:
            v = v - (v @ prev) * prev
        norm = np.linalg.norm(v)
        if norm <= 1e-12:
            break
        v = _fix_sign(v / norm)
        components[k] = v
        work = work - (v @ work @ v) * np.outer(v, v)

    if components[1] @ cov @ components[1] > components[0] @ cov @ components[0]:
        components = components[::-1].copy()

    degenerate = not components[0].any()
    if degenerate:
        logger.warning("PCA projection is degenerate: all points are identical")
        return Projection(np.zeros((len(X), 2)), components, True)
    return Projection(centered @ components.T, components, False)


def cluster_report(points: np.ndarray, assignments: np.ndarray, n_clusters: int,
                   tags: Optional[Sequence[str]] = None,
                   distances: Optional[np.ndarray] = None) -> pd.DataFrame:
    """Per-point rows; s(i) is NaN for every row when the partition has a single cluster."""
    batch = LatentBatch(points, assignments, n_clusters)
    projection = pca_project_2d(batch.points)
    try:
        silhouette = silhouette_score(batch, distances).values
    except SingleClusterError:
        silhouette = np.full(len(batch.points), np.nan)
    frame = pd.DataFrame({
        'x': projection.coords[:, 0],
        'y': projection.coords[:, 1],
        'cluster': batch.assignments,
        'silhouette': silhouette,
    })
    if tags is not None:
        frame['tag'] = list(tags)
    return frame


def cluster_composition(assignments: Sequence[int], tags: Sequence[str],
                        n_clusters: int) -> Dict[int, Dict[str, int]]:
    composition: Dict[int, Dict[str, int]] = {c: {} for c in range(n_clusters)}
    for cluster, tag in zip(assignments, tags):
        counts = composition[int(cluster)]
        counts[tag] = counts.get(tag, 0) + 1
    return composition


def print_cluster_summary(sizes: List[int], silhouette: Optional[float],
                          composition: Optional[Dict[int, Dict[str, int]]] = None):
    print("\n" + "=" * 60)
    print("CLUSTERS")
    print("=" * 60)
    shown = "n/a (single cluster)" if silhouette is None else f"{silhouette:.4f}"
    print(f"  Silhouette : {shown}")
    print(f"  Non-empty  : {sum(1 for s in sizes if s)}/{len(sizes)}")
    for cluster, size in enumerate(sizes):
        line = f"  C{cluster:<3d} {size:6d} points"
        if composition and composition.get(cluster):
            tags = ', '.join(f"{t}={n}" for t, n in sorted(composition[cluster].items()))
            line += f"  [{tags}]"
        print(line)
    print("=" * 60)
