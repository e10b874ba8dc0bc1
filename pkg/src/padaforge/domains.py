"""Adversarial domains, domain pools, and their probability form.

A domain is the set of feature vectors one attack produced, tagged with the
attack identifier; a pool collects domains sharing one feature
dimensionality. Divergence computations work on the probability form: each
feature vector is pushed through a softmax and the per-sample distributions
are averaged, which keeps every coordinate strictly positive.

Persistence: a CSV schema (`attack_id,f_1,...,f_d`, one row per sample) and
an exact binary format (magic ``PADF``, version, counts, little-endian
float64 payload).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyDomain, FormatViolation, IoFailure, ParseError

_MAGIC = b"PADF"
_VERSION = 1


@dataclass
class DomainFeatures:
    """Feature vectors of one attack's adversarial examples."""

    attack_id: str
    features: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise EmptyDomain(f"domain '{self.attack_id}' needs a (v, d) sample matrix")
        if self.features.shape[1] < 1:
            raise DimensionMismatch("feature dimension must be >= 1")
        if not np.all(np.isfinite(self.features)):
            raise FormatViolation(f"domain '{self.attack_id}' has non-finite features")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def count(self) -> int:
        return self.features.shape[0]


@dataclass
class DomainPool:
    """A set of adversarial domains with a shared feature dimensionality."""

    domains: list[DomainFeatures]

    def __post_init__(self):
        if len(self.domains) < 2:
            raise FormatViolation("pool needs at least 2 domains")
        dims = {d.dim for d in self.domains}
        if len(dims) != 1:
            raise DimensionMismatch(f"pool mixes feature dims {sorted(dims)}")
        ids = [d.attack_id for d in self.domains]
        if len(set(ids)) != len(ids):
            raise FormatViolation("pool has duplicate attack ids")

    @property
    def dim(self) -> int:
        return self.domains[0].dim

    @property
    def size(self) -> int:
        return len(self.domains)

    def attack_ids(self) -> list[str]:
        return [d.attack_id for d in self.domains]

    def by_id(self, attack_id: str) -> DomainFeatures:
        for d in self.domains:
            if d.attack_id == attack_id:
                return d
        raise KeyError(attack_id)


@dataclass
class DomainDistribution:
    """A d-dimensional probability vector summarizing one domain."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 1:
            raise DimensionMismatch("distribution must be a 1-D vector")
        if np.any(self.probs < 0):
            raise FormatViolation("distribution has negative entries")
        if abs(float(self.probs.sum()) - 1.0) > 1e-9:
            raise FormatViolation("distribution does not sum to 1")

    @property
    def dim(self) -> int:
        return self.probs.shape[0]


def softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def normalize_domain(dom: DomainFeatures) -> DomainDistribution:
    """Per-sample softmax followed by the sample mean."""
    if dom.count < 1:
        raise EmptyDomain(dom.attack_id)
    return DomainDistribution(softmax_rows(dom.features).mean(axis=0))


# --------------------------------------------------------------------------
# persistence

def save_pool(pool: DomainPool, path, format: str = "binary"):
    if format == "binary":
        _save_binary(pool, path)
    elif format == "csv":
        _save_csv(pool, path)
    else:
        raise ValueError(f"unknown pool format '{format}'")


def load_pool(path, format: str = "binary") -> DomainPool:
    if format == "binary":
        return _load_binary(path)
    if format == "csv":
        return _load_csv(path)
    raise ValueError(f"unknown pool format '{format}'")


def _save_binary(pool: DomainPool, path):
    try:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<III", _VERSION, pool.size, pool.dim))
            for dom in pool.domains:
                raw = dom.attack_id.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<I", dom.count))
                fh.write(dom.features.astype("<f8").tobytes(order="C"))
    except OSError as exc:
        raise IoFailure(f"cannot write pool {path}: {exc}") from exc


def _read_exact(fh, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise FormatViolation("pool file truncated")
    return raw


def _load_binary(path) -> DomainPool:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise IoFailure(f"cannot open pool {path}: {exc}") from exc
    with fh:
        if _read_exact(fh, 4) != _MAGIC:
            raise FormatViolation("bad pool magic")
        version, m, d = struct.unpack("<III", _read_exact(fh, 12))
        if version != _VERSION:
            raise FormatViolation(f"unsupported pool version {version}")
        domains = []
        for _ in range(m):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            attack_id = _read_exact(fh, name_len).decode("utf-8")
            (count,) = struct.unpack("<I", _read_exact(fh, 4))
            raw = _read_exact(fh, 8 * count * d)
            feats = np.frombuffer(raw, dtype="<f8").reshape(count, d).copy()
            domains.append(DomainFeatures(attack_id, feats))
    return DomainPool(domains)


def _save_csv(pool: DomainPool, path):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for dom in pool.domains:
                for row in dom.features:
                    fh.write(dom.attack_id)
                    for value in row:
                        fh.write(",")
                        fh.write(repr(float(value)))
                    fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write pool {path}: {exc}") from exc


def _load_csv(path) -> DomainPool:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoFailure(f"cannot open pool {path}: {exc}") from exc

    order: list[str] = []
    rows: dict[str, list[np.ndarray]] = {}
    dim = None
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) < 2:
            raise ParseError(lineno, "expected attack_id followed by features")
        attack_id = parts[0]
        try:
            values = np.array([float(p) for p in parts[1:]])
        except ValueError as exc:
            raise ParseError(lineno, f"bad float: {exc}") from exc
        if dim is None:
            dim = values.shape[0]
        elif values.shape[0] != dim:
            raise ParseError(lineno, f"row has {values.shape[0]} features, expected {dim}")
        if attack_id not in rows:
            order.append(attack_id)
            rows[attack_id] = []
        rows[attack_id].append(values)
    if dim is None:
        raise FormatViolation(f"pool file {path} is empty")
    return DomainPool([DomainFeatures(a, np.vstack(rows[a])) for a in order])
