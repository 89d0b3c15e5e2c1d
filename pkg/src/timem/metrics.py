"""Context-size and embedding-geometry metrics.

Token counting uses whitespace chunks: a deterministic, model-free
proxy, so absolute counts are not comparable with model tokenizers but
ratios and orderings are. The geometry metrics all use cosine distance
(1 - cosine similarity) over unit-normalized inputs:

  silhouette        mean (b - a) / max(a, b); singleton clusters score 0
  spread            mean cosine distance to the normalized centroid
  radius95          nearest-rank 95th percentile of those distances
  separation ratio  mean pairwise centroid distance divided by the mean
                    distance of points to their own centroid
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateInput


def count_tokens(text: str) -> int:
    """Number of whitespace-delimited chunks."""
    return len(text.split())


def _as_matrix(points) -> np.ndarray:
    m = np.asarray(points, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected 2-D point array, got shape {m.shape}")
    return m


def _cosine_distance_matrix(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero vector in point set")
    unit = m / norms[:, None]
    d = 1.0 - unit @ unit.T
    np.fill_diagonal(d, 0.0)
    return d


def silhouette(points, labels) -> float:
    """Mean silhouette with cosine distance."""
    m = _as_matrix(points)
    labels = list(labels)
    if len(labels) != len(m):
        raise ValueError("points and labels length mismatch")
    unique = sorted(set(labels), key=str)
    if len(unique) < 2:
        raise DegenerateInput("silhouette needs at least 2 labels")
    dist = _cosine_distance_matrix(m)
    members = {lab: [i for i, l in enumerate(labels) if l == lab] for lab in unique}

    scores = []
    for i, lab in enumerate(labels):
        own = members[lab]
        if len(own) == 1:
            scores.append(0.0)
            continue
        a = sum(dist[i][j] for j in own if j != i) / (len(own) - 1)
        b = min(
            sum(dist[i][j] for j in members[other]) / len(members[other])
            for other in unique if other != lab)
        denom = max(a, b)
        scores.append(0.0 if denom == 0.0 else (b - a) / denom)
    return float(np.mean(scores))


def _centroid_distances(m: np.ndarray) -> np.ndarray:
    """Cosine distance of each point to the normalized centroid."""
    centroid = m.mean(axis=0)
    norm = float(np.linalg.norm(centroid))
    if norm < 1e-12:
        # antipodal cancellation: no direction to compare against
        return np.ones(len(m), dtype=np.float64)
    unit_centroid = centroid / norm
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero vector in point set")
    return 1.0 - (m / norms[:, None]) @ unit_centroid


def spread_metrics(points) -> tuple[float, float]:
    """(spread, radius95) of a point set; single point gives (0, 0)."""
    m = _as_matrix(points)
    if len(m) == 0:
        raise ValueError("spread_metrics needs at least one point")
    distances = np.sort(_centroid_distances(m))
    spread = float(distances.mean())
    rank = max(1, math.ceil(0.95 * len(distances)))  # nearest-rank percentile
    radius95 = float(distances[rank - 1])
    return spread, radius95


def separation_ratio(points, labels) -> float:
    """Inter-centroid distance over intra-cluster dispersion.

    Duplicating every cluster's points leaves the value unchanged.
    Returns 0 when centroids coincide, inf when clusters are perfectly
    tight but apart.
    """
    m = _as_matrix(points)
    labels = list(labels)
    unique = sorted(set(labels), key=str)
    if len(unique) < 2:
        raise DegenerateInput("separation ratio needs at least 2 labels")
    centroids = []
    intra = []
    for lab in unique:
        idx = [i for i, l in enumerate(labels) if l == lab]
        sub = m[idx]
        centroids.append(sub.mean(axis=0))
        intra.extend(_centroid_distances(sub).tolist())
    cm = np.asarray(centroids)
    inter = []
    for i in range(len(cm)):
        for j in range(i + 1, len(cm)):
            ni, nj = np.linalg.norm(cm[i]), np.linalg.norm(cm[j])
            if ni < 1e-12 or nj < 1e-12:
                inter.append(1.0)
            else:
                inter.append(1.0 - float(cm[i] @ cm[j]) / (ni * nj))
    numerator = float(np.mean(inter))
    denominator = float(np.mean(intra))
    if denominator == 0.0:
        return math.inf if numerator > 0 else 0.0
    return numerator / denominator
