"""Multi-source adaptation from the selected source domains to a proxy.

Each source domain (benign plus one attack's adversarial examples) gets its
own mapping network and binary classifier on top of a shared two-branch
feature extractor. Training minimizes

    total = classification + lambda * alignment + gamma * discrepancy

where classification is the mean cross-entropy over sources, alignment is
the mean kernel two-sample distance between each source's mapped features
and the mapped proxy batch, and discrepancy is the mean absolute difference
between every classifier pair's class probabilities on the proxy. The proxy
is an unlabeled mix of benign data and adversarial examples drawn evenly
across all training attacks, standing in for unseen attacks.

On feature-vector data both extractor branches consume the raw vector; the
filter-residual branch only differs for image inputs (see the pef module).

Inference averages the per-source adversarial-class probabilities; a sample
is flagged adversarial when the mean strictly exceeds 0.5 (ties resolve to
benign).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat
from .divergence import MmdConfig, mmd2_t
from .errors import DimensionMismatch, EmptyBatch, ShapeMismatch
from .nnkit import Mlp, SgdMomentum, init_mlp, load_checkpoint, save_checkpoint
from .numerics import Rng


@dataclass
class SourceDomain:
    attack_id: str
    benign: np.ndarray = field(repr=False)
    adversarial: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.benign = np.asarray(self.benign, dtype=float)
        self.adversarial = np.asarray(self.adversarial, dtype=float)
        if self.benign.ndim != 2 or self.adversarial.ndim != 2:
            raise ShapeMismatch("source samples must be (n, d) matrices")
        if self.benign.shape != self.adversarial.shape:
            raise ShapeMismatch(
                f"source '{self.attack_id}' needs equal benign/adversarial counts"
            )


@dataclass
class SourceDomainSet:
    sources: list[SourceDomain]
    proxy: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.proxy = np.asarray(self.proxy, dtype=float)
        if len(self.sources) < 2:
            raise EmptyBatch("need at least 2 source domains")
        dims = {s.benign.shape[1] for s in self.sources}
        if len(dims) != 1:
            raise DimensionMismatch(f"sources mix dims {sorted(dims)}")
        if self.proxy.ndim != 2 or self.proxy.shape[0] < 1:
            raise EmptyBatch("proxy set is empty")
        if self.proxy.shape[1] != self.dim:
            raise DimensionMismatch("proxy dim differs from source dim")

    @property
    def dim(self) -> int:
        return self.sources[0].benign.shape[1]

    @property
    def k(self) -> int:
        return len(self.sources)


@dataclass
class MudaModel:
    s_net: Mlp
    f_net: Mlp
    q_nets: list[Mlp]
    c_nets: list[Mlp]
    lambda_: float
    gamma: float
    mmd_cfg: MmdConfig = MmdConfig()

    def __post_init__(self):
        if len(self.q_nets) != len(self.c_nets) or len(self.q_nets) < 2:
            raise ShapeMismatch("need matching q/c networks for K >= 2 sources")
        if self.lambda_ < 0 or self.gamma < 0:
            raise ValueError("lambda and gamma must be >= 0")
        r_dim = self.s_net.out_dim + self.f_net.out_dim
        for q, c in zip(self.q_nets, self.c_nets):
            if q.in_dim != r_dim:
                raise ShapeMismatch(f"mapping net expects dim {q.in_dim}, r(x) has {r_dim}")
            if c.in_dim != q.out_dim or c.out_dim != 2:
                raise ShapeMismatch("classifier must map q output to 2 classes")

    @property
    def k(self) -> int:
        return len(self.q_nets)

    def params(self) -> list[np.ndarray]:
        out = self.s_net.params() + self.f_net.params()
        for q in self.q_nets:
            out += q.params()
        for c in self.c_nets:
            out += c.params()
        return out

    def enhance(self, x: np.ndarray) -> np.ndarray:
        return np.concatenate([self.s_net.forward(x), self.f_net.forward(x)], axis=1)


@dataclass
class MudaBatch:
    """Per-source labeled minibatches plus an unlabeled proxy minibatch."""

    source_x: list[np.ndarray]
    source_y: list[np.ndarray]
    proxy_x: np.ndarray

    def __post_init__(self):
        if len(self.source_x) != len(self.source_y) or not self.source_x:
            raise EmptyBatch("need one (x, y) pair per source")
        self.proxy_x = np.asarray(self.proxy_x, dtype=float)
        if self.proxy_x.ndim != 2 or self.proxy_x.shape[0] < 2:
            raise EmptyBatch("proxy minibatch needs at least 2 samples")
        for i, (x, y) in enumerate(zip(self.source_x, self.source_y)):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=int)
            if x.ndim != 2 or x.shape[0] < 2:
                raise EmptyBatch(f"source {i} minibatch needs at least 2 samples")
            if y.shape != (x.shape[0],):
                raise ShapeMismatch(f"source {i} labels must match its batch")
            if len(np.unique(y)) < 2:
                raise EmptyBatch(f"source {i} minibatch must contain both classes")
            self.source_x[i] = x
            self.source_y[i] = y


def _softmax_t(logits: Tensor) -> Tensor:
    shift = logits - logits.data.max(axis=1, keepdims=True)
    e = shift.exp()
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy_t(logits: Tensor, labels: np.ndarray) -> Tensor:
    n, c = logits.data.shape
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    row_max = logits.data.max(axis=1, keepdims=True)
    lse = (logits - row_max).exp().sum(axis=1, keepdims=True).log() + row_max
    log_prob = logits - lse
    return -(log_prob * onehot).sum() / float(n)


def _split_lifted(model: MudaModel, lifted: list[Tensor]):
    nets = [model.s_net, model.f_net, *model.q_nets, *model.c_nets]
    parts = []
    pos = 0
    for net in nets:
        n = len(net.params())
        parts.append(lifted[pos:pos + n])
        pos += n
    s_par, f_par = parts[0], parts[1]
    q_pars = parts[2:2 + model.k]
    c_pars = parts[2 + model.k:]
    return s_par, f_par, q_pars, c_pars


def muda_losses_t(model: MudaModel, lifted: list[Tensor], batch: MudaBatch):
    """Tape losses (l_cls, l_d, l_disc, l_total) for one step."""
    s_par, f_par, q_pars, c_pars = _split_lifted(model, lifted)

    def enhance(x: np.ndarray) -> Tensor:
        xt = Tensor(x)
        return concat([model.s_net.apply(xt, s_par), model.f_net.apply(xt, f_par)], axis=1)

    k = model.k
    if len(batch.source_x) != k:
        raise ShapeMismatch(f"batch has {len(batch.source_x)} sources, model expects {k}")
    proxy_r = enhance(batch.proxy_x)
    l_cls = None
    l_d = None
    proxy_probs = []
    for i in range(k):
        src_q = model.q_nets[i].apply(enhance(batch.source_x[i]), q_pars[i])
        logits = model.c_nets[i].apply(src_q, c_pars[i])
        ce = _cross_entropy_t(logits, batch.source_y[i])
        l_cls = ce if l_cls is None else l_cls + ce
        proxy_q = model.q_nets[i].apply(proxy_r, q_pars[i])
        align = mmd2_t(src_q, proxy_q, model.mmd_cfg)
        l_d = align if l_d is None else l_d + align
        proxy_probs.append(_softmax_t(model.c_nets[i].apply(proxy_q, c_pars[i])))
    l_cls = l_cls / float(k)
    l_d = l_d / float(k)

    l_disc = None
    for j in range(k - 1):
        for i in range(j + 1, k):
            gap = (proxy_probs[i] - proxy_probs[j]).abs().mean()
            l_disc = gap if l_disc is None else l_disc + gap
    l_disc = l_disc * (2.0 / (k * (k - 1)))

    l_total = l_cls + model.lambda_ * l_d + model.gamma * l_disc
    return l_cls, l_d, l_disc, l_total


def muda_losses(model: MudaModel, batch: MudaBatch) -> tuple[float, float, float, float]:
    lifted = [Tensor(p) for p in model.params()]
    l_cls, l_d, l_disc, l_total = muda_losses_t(model, lifted, batch)
    return (float(l_cls.data), float(l_d.data), float(l_disc.data), float(l_total.data))


# --------------------------------------------------------------------------
# model construction

@dataclass(frozen=True)
class MudaConfig:
    lambda_: float = 1.0
    gamma: float = 1.0
    mmd: MmdConfig = MmdConfig()
    branch_hidden: tuple[int, ...] = (32,)
    branch_out: int = 16
    q_hidden: tuple[int, ...] = (32,)
    q_out: int = 16


def build_muda_model(dim: int, k: int, cfg: MudaConfig, rng: Rng,
                     encoder: Mlp | None = None) -> MudaModel:
    """Fresh model; both extractor branches start from `encoder` when given."""
    if encoder is not None:
        if encoder.in_dim != dim:
            raise ShapeMismatch(f"encoder expects dim {encoder.in_dim}, data has {dim}")
        s_net = encoder.copy()
        f_net = encoder.copy()
        branch_out = encoder.out_dim
    else:
        dims = [dim, *cfg.branch_hidden, cfg.branch_out]
        acts = ["relu"] * len(cfg.branch_hidden) + ["identity"]
        s_net = init_mlp(dims, acts, rng.derive("s-init"))
        f_net = init_mlp(dims, acts, rng.derive("f-init"))
        branch_out = cfg.branch_out
    q_dims = [2 * branch_out, *cfg.q_hidden, cfg.q_out]
    q_acts = ["relu"] * len(cfg.q_hidden) + ["identity"]
    q_nets = [init_mlp(q_dims, q_acts, rng.derive(f"q{i}-init")) for i in range(k)]
    c_nets = [init_mlp([cfg.q_out, 2], ["identity"], rng.derive(f"c{i}-init"))
              for i in range(k)]
    return MudaModel(s_net, f_net, q_nets, c_nets, cfg.lambda_, cfg.gamma, cfg.mmd)


# --------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class PadaTrainConfig:
    epochs: int = 100
    batch: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    holdout_fraction: float = 0.2


@dataclass
class PadaTrainResult:
    model: MudaModel
    trace: list[tuple[int, float, float, float, float]]
    heldout_initial: float
    heldout_final: float


def _full_batch(sources, proxy) -> MudaBatch:
    xs, ys = [], []
    for benign, adversarial in sources:
        xs.append(np.vstack([benign, adversarial]))
        ys.append(np.concatenate([np.zeros(len(benign), dtype=int),
                                  np.ones(len(adversarial), dtype=int)]))
    return MudaBatch(xs, ys, proxy)


def train_pada(data: SourceDomainSet, model: MudaModel, cfg: PadaTrainConfig,
               rng: Rng) -> PadaTrainResult:
    """SGD on the total loss; records a per-epoch trace and held-out values.

    Deterministic given (data, model init, cfg, rng seed). Minibatches pair
    equal benign/adversarial halves per source so both classes are always
    present. When the held-out fraction would leave fewer than 2 samples per
    class, the full training data doubles as the held-out measurement set.
    """
    if data.k != model.k:
        raise ShapeMismatch(f"data has {data.k} sources, model expects {model.k}")

    split_rng = rng.derive("holdout")
    train_parts = []
    hold_parts = []
    for src in data.sources:
        n = src.benign.shape[0]
        n_hold = int(cfg.holdout_fraction * n)
        perm_b = split_rng.gen.permutation(n)
        perm_a = split_rng.gen.permutation(n)
        if n_hold >= 2 and n - n_hold >= 2:
            train_parts.append((src.benign[perm_b[n_hold:]], src.adversarial[perm_a[n_hold:]]))
            hold_parts.append((src.benign[perm_b[:n_hold]], src.adversarial[perm_a[:n_hold]]))
        else:
            train_parts.append((src.benign[perm_b], src.adversarial[perm_a]))
            hold_parts.append(train_parts[-1])
    n_proxy = data.proxy.shape[0]
    n_hold = int(cfg.holdout_fraction * n_proxy)
    perm_p = split_rng.gen.permutation(n_proxy)
    if n_hold >= 2 and n_proxy - n_hold >= 2:
        proxy_train = data.proxy[perm_p[n_hold:]]
        proxy_hold = data.proxy[perm_p[:n_hold]]
    else:
        proxy_train = data.proxy[perm_p]
        proxy_hold = proxy_train

    heldout = _full_batch(hold_parts, proxy_hold)
    heldout_initial = muda_losses(model, heldout)[3]

    params = model.params()
    opt = SgdMomentum(params, lr=cfg.lr, momentum=cfg.momentum)
    step_rng = rng.derive("steps")
    half = max(1, cfg.batch // 2)
    steps = max(int(np.ceil(benign.shape[0] / half))
                for benign, _ in train_parts)

    trace = []
    for epoch in range(cfg.epochs):
        orders = []
        for benign, adversarial in train_parts:
            orders.append((step_rng.gen.permutation(benign.shape[0]),
                           step_rng.gen.permutation(adversarial.shape[0])))
        proxy_order = step_rng.gen.permutation(proxy_train.shape[0])
        sums = np.zeros(4)
        for step in range(steps):
            xs, ys = [], []
            for (benign, adversarial), (ob, oa) in zip(train_parts, orders):
                bidx = np.take(ob, np.arange(step * half, (step + 1) * half),
                               mode="wrap")
                aidx = np.take(oa, np.arange(step * half, (step + 1) * half),
                               mode="wrap")
                xs.append(np.vstack([benign[bidx], adversarial[aidx]]))
                ys.append(np.concatenate([np.zeros(half, dtype=int),
                                          np.ones(half, dtype=int)]))
            pidx = np.take(proxy_order,
                           np.arange(step * cfg.batch, (step + 1) * cfg.batch),
                           mode="wrap")
            batch = MudaBatch(xs, ys, proxy_train[pidx])
            lifted = [Tensor(p, requires_grad=True) for p in params]
            l_cls, l_d, l_disc, l_total = muda_losses_t(model, lifted, batch)
            l_total.backward()
            grads = [np.zeros_like(p) if t.grad is None else t.grad
                     for p, t in zip(params, lifted)]
            opt.step(grads)
            sums += (float(l_cls.data), float(l_d.data),
                     float(l_disc.data), float(l_total.data))
        means = sums / steps
        trace.append((epoch, means[0], means[1], means[2], means[3]))

    heldout_final = muda_losses(model, heldout)[3]
    return PadaTrainResult(model, trace, heldout_initial, heldout_final)


# --------------------------------------------------------------------------
# inference

def detect_scores(model: MudaModel, inputs) -> np.ndarray:
    """Mean adversarial-class probability across the per-source classifiers."""
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 2:
        raise ShapeMismatch("inputs must be an (n, d) matrix")
    r = model.enhance(x)
    total = np.zeros(x.shape[0])
    for q, c in zip(model.q_nets, model.c_nets):
        logits = c.forward(q.forward(r))
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=1, keepdims=True)
        total += probs[:, 1]
    return total / model.k


def detect(model: MudaModel, inputs) -> list[tuple[str, float]]:
    """Per-sample (label, score); a score strictly above 0.5 flags adversarial."""
    scores = detect_scores(model, inputs)
    return [("adversarial" if s > 0.5 else "benign", float(s)) for s in scores]


# --------------------------------------------------------------------------
# persistence

def save_muda(model: MudaModel, path):
    nets = [("s", model.s_net), ("f", model.f_net)]
    nets += [(f"q{i}", q) for i, q in enumerate(model.q_nets)]
    nets += [(f"c{i}", c) for i, c in enumerate(model.c_nets)]
    scalars = [
        ("k", float(model.k)),
        ("lambda", model.lambda_),
        ("gamma", model.gamma),
        ("mmd_kernel_count", float(model.mmd_cfg.kernel_count)),
        ("mmd_bandwidth_base", model.mmd_cfg.bandwidth_base),
        ("mmd_bandwidth_step", model.mmd_cfg.bandwidth_step),
    ]
    save_checkpoint(path, nets, scalars)


def load_muda(path) -> MudaModel:
    nets, scalars = load_checkpoint(path)
    k = int(scalars["k"])
    mmd_cfg = MmdConfig(
        kernel_count=int(scalars["mmd_kernel_count"]),
        bandwidth_base=scalars["mmd_bandwidth_base"],
        bandwidth_step=scalars["mmd_bandwidth_step"],
    )
    return MudaModel(
        s_net=nets["s"],
        f_net=nets["f"],
        q_nets=[nets[f"q{i}"] for i in range(k)],
        c_nets=[nets[f"c{i}"] for i in range(k)],
        lambda_=scalars["lambda"],
        gamma=scalars["gamma"],
        mmd_cfg=mmd_cfg,
    )


def write_trace_csv(trace, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,l_cls,l_d,l_disc,l_total\n")
        for epoch, l_cls, l_d, l_disc, l_total in trace:
            fh.write(f"{epoch},{l_cls!r},{l_d!r},{l_disc!r},{l_total!r}\n")
