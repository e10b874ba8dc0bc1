"""Spectral clustering of the domain similarity matrix and cluster-count selection.

Follows the normalized-affinity procedure: with degree matrix D, the k
leading eigenvectors of D^(-1/2) W D^(-1/2) form the embedding, rows are
normalized to unit length, and k-means assigns labels. A small epsilon is
added to degrees so an isolated domain (zero similarity to all others)
cannot zero out the inverse square root.

The cluster count is chosen by maximizing the Calinski-Harabasz ratio of
between- to within-cluster scatter, evaluated on the spectral embedding.
The candidate range starts at 3 (the score degenerately favors K=2) and is
clamped to M-1 because the ratio's denominator vanishes at K=M; ties go to
the smaller K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateK,
    DisconnectedDegenerate,
    InvalidK,
    NotSymmetric,
    PoolTooSmall,
)
from .numerics import Rng, as_matrix, kmeans, sym_eigen

EPS_DEG = 1e-12
KMEANS_RESTARTS = 10


@dataclass
class ClusterAssignment:
    k: int
    labels: np.ndarray
    embedding: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        self.embedding = np.asarray(self.embedding, dtype=float)
        if self.k < 2:
            raise InvalidK("assignment needs k >= 2")
        if self.labels.min() < 0 or self.labels.max() >= self.k:
            raise InvalidK("label outside [0, k)")
        if len(np.unique(self.labels)) != self.k:
            raise InvalidK("assignment has an empty cluster")
        # spectral_cluster emits (M, k) coordinates; any (M, >=1) point set is
        # scoreable so one fixture can be compared across different k.
        if self.embedding.ndim != 2 or self.embedding.shape[0] != self.labels.shape[0]:
            raise InvalidK("embedding must have one row per domain")

    def clusters(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == c) for c in range(self.k)]


def _check_affinity(w: np.ndarray):
    if w.shape[0] != w.shape[1]:
        raise NotSymmetric("similarity matrix must be square")
    if float(np.max(np.abs(w - w.T))) > 1e-9 * max(1.0, float(np.max(np.abs(w)))):
        raise NotSymmetric("similarity matrix is not symmetric")
    if np.any(w < 0):
        raise ValueError("similarity matrix has negative entries")
    if np.any(np.diagonal(w) != 0):
        raise ValueError("similarity matrix diagonal must be zero")


def spectral_cluster(w, k: int, rng: Rng) -> ClusterAssignment:
    """Partition the domains behind similarity matrix `w` into k clusters."""
    w = as_matrix(w)
    _check_affinity(w)
    m = w.shape[0]
    if not (2 <= k <= m - 1):
        raise InvalidK(f"k={k} outside [2, {m - 1}]")
    if not np.any(w > 0):
        raise DisconnectedDegenerate("similarity matrix is all-zero")

    degrees = w.sum(axis=1) + EPS_DEG
    dinv = 1.0 / np.sqrt(degrees)
    affinity = dinv[:, None] * w * dinv[None, :]
    affinity = (affinity + affinity.T) / 2.0
    _, vecs = sym_eigen(affinity)
    embedding = vecs[:, :k].copy()
    norms = np.linalg.norm(embedding, axis=1)
    embedding /= np.maximum(norms, 1e-15)[:, None]
    labels = kmeans(embedding, k, rng, restarts=KMEANS_RESTARTS)
    return ClusterAssignment(k=k, labels=labels, embedding=embedding)


def ch_score(assignment: ClusterAssignment) -> float:
    """Calinski-Harabasz ratio on the spectral embedding; higher is better.

    Perfect clusters (zero within-cluster scatter) return +inf so they
    outrank every finite score.
    """
    points = assignment.embedding
    n = points.shape[0]
    k = assignment.k
    if k >= n:
        raise DegenerateK(f"k={k} with {n} points zeroes the denominator")
    centroid = points.mean(axis=0)
    between = 0.0
    within = 0.0
    for members in assignment.clusters():
        cluster_points = points[members]
        center = cluster_points.mean(axis=0)
        between += members.size * float(np.sum((center - centroid) ** 2))
        within += float(np.sum((cluster_points - center) ** 2))
    if within == 0.0:
        return math.inf
    return (between / (k - 1)) / (within / (n - k))


def auto_cluster(w, rng: Rng) -> ClusterAssignment:
    """Evaluate k in 3..M-1 and return the assignment with the best CH score."""
    w = as_matrix(w)
    m = w.shape[0]
    if m < 4:
        raise PoolTooSmall(f"need at least 4 domains, got {m}")
    best = None
    best_score = -math.inf
    for k in range(3, m):
        assignment = spectral_cluster(w, k, rng.derive(f"spectral-k{k}"))
        score = ch_score(assignment)
        if score > best_score:
            best = assignment
            best_score = score
    return best
