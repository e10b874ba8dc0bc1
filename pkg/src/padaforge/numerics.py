"""Dense linear algebra, clustering primitives, and seeded randomness.

Matrices are plain 2-D float64 ``numpy.ndarray`` values (row-major, all
entries finite); ``as_matrix`` is the validating constructor. Randomness
flows through ``Rng``, a seed paired with its generator, so any consumer
can derive independent, reproducible sub-streams by label.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, NonSquare, NotSymmetric, ShapeMismatch, TooFewPoints

SYMMETRY_TOL = 1e-9
_JACOBI_MAX_SWEEPS = 100
_LLOYD_MAX_ITER = 300


# --------------------------------------------------------------------------
# seeded randomness

@dataclass
class Rng:
    """A 64-bit seed plus the generator it spawned.

    Equal seeds produce identical streams. Instances are stateful and must
    not be shared across threads; derive per-use children instead.
    """

    seed: int
    gen: np.random.Generator

    def derive(self, label: str) -> "Rng":
        """Child stream keyed by (seed, label); independent of this stream's state."""
        return make_rng(derive_seed(self.seed, label))


def make_rng(seed: int) -> Rng:
    return Rng(seed=int(seed), gen=np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF))


def derive_seed(seed: int, label: str) -> int:
    """Stable 63-bit child seed from a parent seed and a stream label."""
    digest = hashlib.sha256(f"{int(seed)}/{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF


# --------------------------------------------------------------------------
# matrices

def as_matrix(data) -> np.ndarray:
    """Validate and return a 2-D float64 matrix (finite entries)."""
    m = np.asarray(data, dtype=float)
    if m.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise FloatingPointError("matrix entries must be finite")
    return m


def sym_eigen(m, symmetry_tol: float = SYMMETRY_TOL):
    """Full eigendecomposition of a symmetric matrix via cyclic Jacobi sweeps.

    Returns (eigenvalues, eigenvectors) with eigenvalues sorted descending
    and eigenvectors as the corresponding orthonormal columns. Eigenvector
    signs are canonicalized so the largest-magnitude component is positive.
    """
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise NonSquare(f"matrix has shape {arr.shape}")
    a = as_matrix(arr).copy()
    n = a.shape[0]
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if float(np.max(np.abs(a - a.T))) > symmetry_tol * scale:
        raise NotSymmetric("matrix exceeds symmetry tolerance")
    a = (a + a.T) / 2.0

    v = np.eye(n)
    if n <= 1:
        return a.diagonal().copy(), v

    frob = float(np.linalg.norm(a))
    stop = max(1e-300, 1e-14 * frob)

    def off_norm(mat: np.ndarray) -> float:
        return float(np.sqrt(2.0 * np.sum(np.triu(mat, 1) ** 2)))

    converged = False
    for _ in range(_JACOBI_MAX_SWEEPS):
        off = off_norm(a)
        if off <= stop:
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= stop / (n * n):
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.hypot(t, 1.0)
                s = t * c
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    if not converged and off_norm(a) > stop:
        raise NoConvergence(f"Jacobi sweeps exhausted (off-diagonal norm {off_norm(a):.3e})")

    evals = a.diagonal().copy()
    order = np.argsort(-evals, kind="stable")
    evals = evals[order]
    vecs = v[:, order]
    for j in range(n):
        lead = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[lead, j] < 0:
            vecs[:, j] = -vecs[:, j]
    return evals, vecs


# --------------------------------------------------------------------------
# k-means

def _squared_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kmeanspp_init(points: np.ndarray, k: int, rng: Rng) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    first = int(rng.gen.integers(n))
    centers[0] = points[first]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.gen.integers(n))
        else:
            r = rng.gen.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), r, side="right"))
            idx = min(idx, n - 1)
        centers[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))
    return centers


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int = _LLOYD_MAX_ITER):
    """Lloyd iterations with farthest-point reseeding of empty clusters.

    Returns (labels, centers, wcss, objective_history).
    """
    k = centers.shape[0]
    labels = np.full(points.shape[0], -1, dtype=int)
    history = []
    for _ in range(max_iter):
        d2 = _squared_distances(points, centers)
        new_labels = np.argmin(d2, axis=1)
        for empty in range(k):
            if np.any(new_labels == empty):
                continue
            assigned = d2[np.arange(points.shape[0]), new_labels]
            donor = int(np.argmax(assigned))
            new_labels[donor] = empty
            centers[empty] = points[donor]
            d2[:, empty] = np.sum((points - centers[empty]) ** 2, axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            centers[j] = points[labels == j].mean(axis=0)
        wcss = float(np.sum((points - centers[labels]) ** 2))
        history.append(wcss)
    wcss = float(np.sum((points - centers[labels]) ** 2))
    return labels, centers, wcss, history


def kmeans(points, k: int, rng: Rng, restarts: int = 10) -> np.ndarray:
    """k-means++ with Lloyd iterations, returning labels of the best restart.

    Every cluster in the returned labeling is non-empty; empty clusters that
    appear mid-iteration are re-seeded from the farthest assigned point.
    """
    pts = as_matrix(points)
    if k < 1:
        raise TooFewPoints("k must be at least 1")
    if k > pts.shape[0]:
        raise TooFewPoints(f"k={k} exceeds point count {pts.shape[0]}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    best_labels = None
    best_wcss = np.inf
    for _ in range(restarts):
        centers = _kmeanspp_init(pts, k, rng)
        labels, _, wcss, _ = _lloyd(pts, centers)
        if wcss < best_wcss:
            best_wcss = wcss
            best_labels = labels
    return best_labels
