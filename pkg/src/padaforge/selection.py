"""Selecting the source-domain combination with the widest feature-space coverage.

The score for a candidate combination (one domain per cluster) is the ratio
of summed intra-domain dispersion over the divergence between the selected
domains' pooled samples and the full pool's pooled samples. Dispersion is
measured after L2-normalizing every sample, so it is scale-free; the
divergence denominator is floored at EPS_SIM because selecting the whole
pool makes it exactly zero under the JSD metric.

All cross-cluster combinations are scored exhaustively (capped; there is no
approximate path) and the argmax is returned with the full audit list.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .clustering import ClusterAssignment
from .divergence import EPS_SIM, MmdConfig, jsd, mmd2
from .domains import DomainFeatures, DomainPool, normalize_domain
from .errors import CombinatorialBlowup, DimensionMismatch, ZeroVector

COMBINATION_CAP = 10 ** 6


@dataclass
class PadSelection:
    """Winning combination (one attack per cluster), its score, and the audit list."""

    chosen: tuple[str, ...]
    cefs: float
    all_scores: list[tuple[tuple[str, ...], float]]


def idd(dom: DomainFeatures) -> float:
    """Mean distance of L2-normalized samples to their normalized mean.

    Distances are taken relative to the first sample so a domain of
    identical samples scores exactly zero.
    """
    norms = np.linalg.norm(dom.features, axis=1)
    if np.any(norms < 1e-15):
        raise ZeroVector(f"domain '{dom.attack_id}' has a zero-norm sample")
    unit = dom.features / norms[:, None]
    rel = unit - unit[0]
    centered = rel - rel.mean(axis=0)
    return float(np.mean(np.linalg.norm(centered, axis=1)))


def _concat(domains: list[DomainFeatures]) -> DomainFeatures:
    if not domains:
        raise ValueError("cannot concatenate zero domains")
    dims = {d.dim for d in domains}
    if len(dims) != 1:
        raise DimensionMismatch(f"concatenation mixes dims {sorted(dims)}")
    stacked = np.vstack([d.features for d in domains])
    name = "+".join(d.attack_id for d in domains)
    return DomainFeatures(name, stacked)


def dad(a: list[DomainFeatures], b: list[DomainFeatures], metric: str = "jsd",
        mmd_cfg: MmdConfig = MmdConfig()) -> float:
    """Divergence between two domain collections after concatenating each side.

    JSD mode compares the probability forms and floors the result at EPS_SIM
    so it can serve as a divisor; MMD mode compares raw samples and may be
    slightly negative (unbiased estimator).
    """
    ca = _concat(a)
    cb = _concat(b)
    if ca.dim != cb.dim:
        raise DimensionMismatch(f"sides have dims {ca.dim} vs {cb.dim}")
    if metric == "jsd":
        return max(jsd(normalize_domain(ca), normalize_domain(cb)), EPS_SIM)
    if metric == "mmd":
        return mmd2(ca.features, cb.features, mmd_cfg)
    raise ValueError(f"unknown DAD metric '{metric}'")


def cefs(selected: list[DomainFeatures], pool: DomainPool, metric: str = "jsd",
         mmd_cfg: MmdConfig = MmdConfig()) -> float:
    """Coverage score: sum of selected dispersions over divergence from the pool."""
    ids = set(pool.attack_ids())
    for dom in selected:
        if dom.attack_id not in ids:
            raise KeyError(f"'{dom.attack_id}' is not in the pool")
    numerator = sum(idd(dom) for dom in selected)
    denominator = max(dad(selected, pool.domains, metric, mmd_cfg), EPS_SIM)
    return numerator / denominator


def select_pads(pool: DomainPool, assignment: ClusterAssignment, metric: str = "jsd",
                mmd_cfg: MmdConfig = MmdConfig(),
                cap: int = COMBINATION_CAP) -> PadSelection:
    """Score every one-per-cluster combination and return the argmax.

    Ties break toward the lexicographically smallest attack-id tuple. The
    audit list keeps every (combination, score) pair in enumeration order.
    """
    if assignment.labels.shape[0] != pool.size:
        raise DimensionMismatch(
            f"assignment covers {assignment.labels.shape[0]} domains, pool has {pool.size}"
        )
    clusters = assignment.clusters()
    total = 1
    for members in clusters:
        total *= members.size
    if total > cap:
        raise CombinatorialBlowup(f"{total} combinations exceed cap {cap}")

    ids = pool.attack_ids()
    all_scores: list[tuple[tuple[str, ...], float]] = []
    best_combo: tuple[str, ...] | None = None
    best_score = -np.inf
    for picks in itertools.product(*clusters):
        combo = tuple(ids[i] for i in picks)
        score = cefs([pool.domains[i] for i in picks], pool, metric, mmd_cfg)
        all_scores.append((combo, score))
        if score > best_score or (score == best_score and combo < best_combo):
            best_combo = combo
            best_score = score
    return PadSelection(chosen=best_combo, cefs=best_score, all_scores=all_scores)


def write_audit_csv(selection: PadSelection, path):
    """Audit artifact: one `combination;cefs` row per scored combination."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("combination;cefs\n")
        for combo, score in selection.all_scores:
            fh.write("+".join(combo))
            fh.write(";")
            fh.write(repr(float(score)))
            fh.write("\n")
