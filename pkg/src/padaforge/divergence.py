"""Distribution distances between adversarial domains.

Jensen-Shannon divergence (natural log, so the range is [0, ln 2]) drives
the reciprocal similarity score between two normalized domains and the
pairwise similarity matrix W fed to spectral clustering. The kernel
two-sample distance is an unbiased multi-kernel Gaussian MMD^2 estimator
with a geometric bandwidth ladder; it doubles as the alignment distance in
the adaptation losses, so a tape-differentiable variant is provided with
bandwidths treated as per-batch constants.

The reciprocal similarity has a pole when two domains coincide (JSD = 0);
values are capped at 1/EPS_SIM so W stays finite and near-duplicates read
as maximally similar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .domains import DomainDistribution, DomainFeatures, DomainPool, normalize_domain
from .errors import DimensionMismatch, TooFewSamples

EPS_SIM = 1e-12
SIM_CAP = 1.0 / EPS_SIM


def _as_probs(p) -> np.ndarray:
    if isinstance(p, DomainDistribution):
        return p.probs
    return np.asarray(p, dtype=float)


def kl(p, q) -> float:
    """KL(p || q) with the 0 * log(0/x) = 0 convention."""
    p = _as_probs(p)
    q = _as_probs(q)
    if p.shape != q.shape:
        raise DimensionMismatch(f"KL operands {p.shape} vs {q.shape}")
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def jsd(p, q) -> float:
    """Jensen-Shannon divergence, 0.5*KL(p||m) + 0.5*KL(q||m) with m=(p+q)/2."""
    p = _as_probs(p)
    q = _as_probs(q)
    if p.shape != q.shape:
        raise DimensionMismatch(f"JSD operands {p.shape} vs {q.shape}")
    m = (p + q) / 2.0
    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def adsm(h_i: DomainFeatures, h_j: DomainFeatures) -> float:
    """Reciprocal-JSD similarity between two domains, capped at 1/EPS_SIM."""
    if h_i.dim != h_j.dim:
        raise DimensionMismatch(f"domains have dims {h_i.dim} vs {h_j.dim}")
    value = jsd(normalize_domain(h_i), normalize_domain(h_j))
    if value < EPS_SIM:
        return SIM_CAP
    return 1.0 / value


def similarity_matrix(pool: DomainPool) -> np.ndarray:
    """Pairwise domain similarities; symmetric with an exactly-zero diagonal."""
    m = pool.size
    w = np.zeros((m, m))
    dists = [normalize_domain(d) for d in pool.domains]
    for i in range(m):
        for j in range(i + 1, m):
            value = jsd(dists[i], dists[j])
            sim = SIM_CAP if value < EPS_SIM else 1.0 / value
            w[i, j] = sim
            w[j, i] = sim
    return w


# --------------------------------------------------------------------------
# maximum mean discrepancy

@dataclass(frozen=True)
class MmdConfig:
    """Gaussian kernel bank: exp(-d^2 / bw) summed over a bandwidth ladder.

    `bandwidth_base` is in squared-distance units; 0 selects the median
    pairwise squared distance of the pooled sample. The ladder is
    base * step**(i - kernel_count//2) for i in range(kernel_count).
    """

    kernel_count: int = 5
    bandwidth_base: float = 0.0
    bandwidth_step: float = 2.0

    def __post_init__(self):
        if self.kernel_count < 1:
            raise ValueError("kernel_count must be >= 1")
        if self.bandwidth_step <= 1.0:
            raise ValueError("bandwidth_step must exceed 1")
        if self.bandwidth_base < 0.0:
            raise ValueError("bandwidth_base must be >= 0")


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = np.sum(a * a, axis=1)
    bb = np.sum(b * b, axis=1)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def bandwidth_ladder(xs: np.ndarray, ys: np.ndarray, cfg: MmdConfig) -> np.ndarray:
    """Resolve the kernel bandwidths for a concrete pair of samples."""
    if cfg.bandwidth_base > 0.0:
        base = cfg.bandwidth_base
    else:
        z = np.vstack([xs, ys])
        d2 = _pairwise_sq_dists(z, z)
        off = d2[np.triu_indices(z.shape[0], k=1)]
        base = float(np.median(off))
        if base <= 0.0:
            base = 1.0
    shift = cfg.kernel_count // 2
    return np.array([base * cfg.bandwidth_step ** (i - shift) for i in range(cfg.kernel_count)])


def _check_two_sample(xs: np.ndarray, ys: np.ndarray):
    if xs.ndim != 2 or ys.ndim != 2:
        raise DimensionMismatch("samples must be (n, d) matrices")
    if xs.shape[1] != ys.shape[1]:
        raise DimensionMismatch(f"sample dims {xs.shape[1]} vs {ys.shape[1]}")
    if xs.shape[0] < 2 or ys.shape[0] < 2:
        raise TooFewSamples("unbiased MMD^2 needs at least 2 samples per side")


def mmd2(xs, ys, cfg: MmdConfig = MmdConfig()) -> float:
    """Unbiased multi-kernel Gaussian MMD^2; may be slightly negative."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    _check_two_sample(xs, ys)
    bws = bandwidth_ladder(xs, ys, cfg)

    def kernel_sum(d2: np.ndarray) -> np.ndarray:
        out = np.zeros_like(d2)
        for bw in bws:
            out += np.exp(-d2 / bw)
        return out

    m, n = xs.shape[0], ys.shape[0]
    kxx = kernel_sum(_pairwise_sq_dists(xs, xs))
    kyy = kernel_sum(_pairwise_sq_dists(ys, ys))
    kxy = kernel_sum(_pairwise_sq_dists(xs, ys))
    term_x = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    term_y = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    term_xy = 2.0 * kxy.sum() / (m * n)
    return float(term_x + term_y - term_xy)


def mmd2_t(xs: Tensor, ys: Tensor, cfg: MmdConfig = MmdConfig()) -> Tensor:
    """Tape-differentiable MMD^2; bandwidths are detached per-call constants."""
    _check_two_sample(xs.data, ys.data)
    bws = bandwidth_ladder(xs.data, ys.data, cfg)
    m, n = xs.data.shape[0], ys.data.shape[0]

    def sq_dists(a: Tensor, b: Tensor) -> Tensor:
        aa = (a * a).sum(axis=1, keepdims=True)
        bb = (b * b).sum(axis=1, keepdims=True)
        return aa + bb.T - 2.0 * (a @ b.T)

    def kernel_sum(d2: Tensor) -> Tensor:
        parts = None
        for bw in bws:
            term = (d2 * (-1.0 / bw)).exp()
            parts = term if parts is None else parts + term
        return parts

    off_x = 1.0 - np.eye(m)
    off_y = 1.0 - np.eye(n)
    kxx = kernel_sum(sq_dists(xs, xs))
    kyy = kernel_sum(sq_dists(ys, ys))
    kxy = kernel_sum(sq_dists(xs, ys))
    term_x = (kxx * off_x).sum() / (m * (m - 1))
    term_y = (kyy * off_y).sum() / (n * (n - 1))
    term_xy = kxy.sum() * (2.0 / (m * n))
    return term_x + term_y - term_xy
