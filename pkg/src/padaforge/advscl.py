"""Contrastive acquisition of distinguishable adversarial domains.

Examples are labeled only by the attack that generated them; two jittered
views of each sampled example form a batch of 2n views, and the supervised
contrastive loss pulls same-attack views together against all others. Views
are the example plus small zero-mean Gaussian jitter (scaled per dimension);
with vector data, literally identical views would make every positive pair
trivially aligned, so the jitter stands in for the normalization-only
augmentation.

After training, the projection head is discarded and the encoder groups
examples by attack into a domain pool.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .domains import DomainFeatures, DomainPool
from .errors import (
    DimensionMismatch,
    FormatViolation,
    IoFailure,
    NoPositives,
    ParseError,
    ShapeMismatch,
)
from .nnkit import Mlp, SgdMomentum, init_mlp
from .numerics import Rng


@dataclass
class LabeledExampleSet:
    """Raw examples tagged with the attack that generated them."""

    attack_ids: list[str]
    examples: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.examples = np.asarray(self.examples, dtype=float)
        if self.examples.ndim != 2 or self.examples.shape[0] < 1:
            raise ShapeMismatch("examples must be a non-empty (n, d) matrix")
        if len(self.attack_ids) != self.examples.shape[0]:
            raise ShapeMismatch("one attack_id per example required")
        if not np.all(np.isfinite(self.examples)):
            raise FormatViolation("examples contain non-finite values")

    @property
    def dim(self) -> int:
        return self.examples.shape[1]

    @property
    def count(self) -> int:
        return self.examples.shape[0]

    def groups(self) -> list[tuple[str, np.ndarray]]:
        """(attack_id, row indices) in first-appearance order."""
        order: list[str] = []
        seen: dict[str, list[int]] = {}
        for i, a in enumerate(self.attack_ids):
            if a not in seen:
                order.append(a)
                seen[a] = []
            seen[a].append(i)
        return [(a, np.array(seen[a], dtype=int)) for a in order]

    def validate_for_contrastive(self):
        groups = self.groups()
        if len(groups) < 2:
            raise NoPositives("contrastive training needs >= 2 distinct attacks")
        for attack_id, idx in groups:
            if idx.size < 2:
                raise NoPositives(f"attack '{attack_id}' has fewer than 2 examples")


@dataclass
class ContrastiveBatch:
    """2n projected views with their attack ids and the temperature."""

    views: np.ndarray = field(repr=False)
    attack_ids: list[str] = field(default_factory=list)
    temperature: float = 0.1

    def __post_init__(self):
        self.views = np.asarray(self.views, dtype=float)
        if self.views.ndim != 2 or self.views.shape[0] % 2 != 0 or self.views.shape[0] < 2:
            raise ShapeMismatch("views must be a (2n, d) matrix")
        if len(self.attack_ids) != self.views.shape[0]:
            raise ShapeMismatch("one attack_id per view required")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        norms = np.linalg.norm(self.views, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise FormatViolation("views must be unit-normalized")


def _positive_mask(attack_ids) -> np.ndarray:
    ids = np.asarray(attack_ids)
    same = ids[:, None] == ids[None, :]
    np.fill_diagonal(same, False)
    counts = same.sum(axis=1)
    if np.any(counts == 0):
        lonely = ids[counts == 0][0]
        raise NoPositives(f"attack '{lonely}' appears once in the batch")
    return same


def supcon_loss_t(z: Tensor, attack_ids, temperature: float) -> Tensor:
    """Tape supervised contrastive loss, summed over anchors.

    Denominators range over every view except the anchor; each anchor's term
    averages -log softmax over its positives.
    """
    pos = _positive_mask(attack_ids)
    n = z.data.shape[0]
    not_self = 1.0 - np.eye(n)
    logits = (z @ z.T) * (1.0 / temperature)
    row_max = logits.data.max(axis=1, keepdims=True)
    exps = (logits - row_max).exp() * not_self
    lse = exps.sum(axis=1, keepdims=True).log() + row_max
    log_prob = logits - lse
    weights = pos / pos.sum(axis=1, keepdims=True)
    return -(log_prob * weights).sum()


def supcon_loss(batch: ContrastiveBatch) -> float:
    return float(supcon_loss_t(Tensor(batch.views), batch.attack_ids, batch.temperature).data)


def normalize_rows_t(z: Tensor) -> Tensor:
    norm = ((z * z).sum(axis=1, keepdims=True) + 1e-12).sqrt()
    return z / norm


# --------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class AdvsclConfig:
    epochs: int = 30
    batch_pairs: int = 32
    lr: float = 0.003
    momentum: float = 0.9
    temperature: float = 0.1
    view_jitter: float = 0.01
    enc_hidden: tuple[int, ...] = (64, 64)
    enc_out: int = 16
    proj_hidden: tuple[int, ...] = (32,)
    proj_out: int = 32


def build_encoder(dim: int, cfg: AdvsclConfig, rng: Rng) -> tuple[Mlp, Mlp]:
    enc_dims = [dim, *cfg.enc_hidden, cfg.enc_out]
    enc = init_mlp(enc_dims, ["relu"] * len(cfg.enc_hidden) + ["identity"],
                   rng.derive("enc-init"))
    proj_dims = [cfg.enc_out, *cfg.proj_hidden, cfg.proj_out]
    proj = init_mlp(proj_dims, ["relu"] * len(cfg.proj_hidden) + ["identity"],
                    rng.derive("proj-init"))
    return enc, proj


def make_views(data: LabeledExampleSet, indices: np.ndarray,
               jitter_scale: np.ndarray, rng: Rng) -> tuple[np.ndarray, list[str]]:
    """Two jittered views per selected example, interleaved (2k-1, 2k)."""
    base = data.examples[indices]
    noise = rng.gen.normal(size=(2, base.shape[0], base.shape[1])) * jitter_scale
    views = np.empty((2 * base.shape[0], base.shape[1]))
    views[0::2] = base + noise[0]
    views[1::2] = base + noise[1]
    ids = [data.attack_ids[i] for i in indices for _ in range(2)]
    return views, ids


def project_views(enc: Mlp, proj: Mlp, views: np.ndarray) -> np.ndarray:
    z = proj.forward(enc.forward(views))
    return normalize_rows_t(Tensor(z)).data


def sample_contrastive_batch(data: LabeledExampleSet, enc: Mlp, proj: Mlp,
                             cfg: AdvsclConfig, rng: Rng) -> ContrastiveBatch:
    """Embed one randomly sampled batch; used for held-out loss evaluation."""
    jitter_scale = cfg.view_jitter * data.examples.std(axis=0)
    take = min(cfg.batch_pairs, data.count)
    indices = rng.gen.choice(data.count, size=take, replace=False)
    views, ids = make_views(data, indices, jitter_scale, rng)
    return ContrastiveBatch(project_views(enc, proj, views), ids, cfg.temperature)


def train_encoder(data: LabeledExampleSet, cfg: AdvsclConfig, rng: Rng) -> tuple[Mlp, Mlp]:
    """Fit encoder and projection head by SGD on the contrastive loss.

    Deterministic given (data, cfg, rng seed); zero epochs returns the
    freshly initialized networks untouched.
    """
    data.validate_for_contrastive()
    enc, proj = build_encoder(data.dim, cfg, rng)
    jitter_scale = cfg.view_jitter * data.examples.std(axis=0)
    step_rng = rng.derive("steps")
    params = enc.params() + proj.params()
    opt = SgdMomentum(params, lr=cfg.lr, momentum=cfg.momentum)
    for _ in range(cfg.epochs):
        order = step_rng.gen.permutation(data.count)
        for start in range(0, data.count, cfg.batch_pairs):
            indices = order[start:start + cfg.batch_pairs]
            views, ids = make_views(data, indices, jitter_scale, step_rng)
            lifted = [Tensor(p, requires_grad=True) for p in params]
            n_enc = len(enc.params())
            x = Tensor(views)
            h = enc.apply(x, lifted[:n_enc])
            z = normalize_rows_t(proj.apply(h, lifted[n_enc:]))
            loss = supcon_loss_t(z, ids, cfg.temperature)
            loss.backward()
            grads = [np.zeros_like(p) if t.grad is None else t.grad
                     for p, t in zip(params, lifted)]
            opt.step(grads)
    return enc, proj


def embed_pool(enc: Mlp, data: LabeledExampleSet) -> DomainPool:
    """Group encoder outputs by attack into a domain pool."""
    if data.dim != enc.in_dim:
        raise ShapeMismatch(f"encoder expects dim {enc.in_dim}, data has {data.dim}")
    domains = []
    for attack_id, idx in data.groups():
        domains.append(DomainFeatures(attack_id, enc.forward(data.examples[idx])))
    return DomainPool(domains)


# --------------------------------------------------------------------------
# example-set persistence (CSV: attack_id, f_1, ..., f_d)

def save_examples(data: LabeledExampleSet, path):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for attack_id, row in zip(data.attack_ids, data.examples):
                fh.write(attack_id)
                for value in row:
                    fh.write(",")
                    fh.write(repr(float(value)))
                fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write examples {path}: {exc}") from exc


def load_examples(path) -> LabeledExampleSet:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoFailure(f"cannot open examples {path}: {exc}") from exc
    ids: list[str] = []
    rows: list[np.ndarray] = []
    dim = None
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) < 2:
            raise ParseError(lineno, "expected attack_id followed by features")
        try:
            values = np.array([float(p) for p in parts[1:]])
        except ValueError as exc:
            raise ParseError(lineno, f"bad float: {exc}") from exc
        if dim is None:
            dim = values.shape[0]
        elif values.shape[0] != dim:
            raise ParseError(lineno, f"row has {values.shape[0]} features, expected {dim}")
        ids.append(parts[0])
        rows.append(values)
    if not rows:
        raise FormatViolation(f"example file {path} is empty")
    return LabeledExampleSet(ids, np.vstack(rows))
