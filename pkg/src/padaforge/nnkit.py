"""Feed-forward networks with reverse-mode gradients.

Networks are small MLPs over feature vectors: the shared encoder and
projection head used for contrastive acquisition, and the per-source mapping
and classifier heads used for multi-source adaptation. Training is plain
mini-batch SGD with momentum; initialization is fan-in-scaled uniform from a
seeded stream, so equal seeds give equal parameters.

Checkpoints are little-endian binary: magic ``PADM``, a format version, then
named network sections (layer dims, activation codes, weights and biases as
64-bit floats) and a trailing table of named scalars.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import FormatViolation, IoFailure, NonFiniteLoss, ShapeMismatch
from .numerics import Rng

_ACTIVATIONS = ("identity", "relu", "tanh")
_MAGIC = b"PADM"
_VERSION = 1


@dataclass
class Mlp:
    """Affine layers with per-layer activations; parameters are mutable arrays."""

    layer_dims: list[int]
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray] = field(repr=False)
    activations: list[str]

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def lift(self) -> list[Tensor]:
        """Wrap parameters as gradient-tracked tensors sharing this net's storage."""
        return [Tensor(p, requires_grad=True) for p in self.params()]

    def apply(self, x: Tensor, lifted: list[Tensor]) -> Tensor:
        """Tape forward pass using `lifted` in the order produced by lift()."""
        h = x
        for i, act in enumerate(self.activations):
            h = h @ lifted[2 * i] + lifted[2 * i + 1]
            if act == "relu":
                h = h.relu()
            elif act == "tanh":
                h = h.tanh()
        return h

    def forward(self, batch) -> np.ndarray:
        """Plain forward pass on a (n, in_dim) batch; rows are inputs."""
        x = np.asarray(batch, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatch(
                f"expected batch of shape (n, {self.in_dim}), got {x.shape}"
            )
        return self.apply(Tensor(x), [Tensor(p) for p in self.params()]).data

    def copy(self) -> "Mlp":
        return Mlp(
            layer_dims=list(self.layer_dims),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activations=list(self.activations),
        )


def init_mlp(layer_dims: list[int], activations: list[str], rng: Rng) -> Mlp:
    """Uniform fan-in-scaled initialization (bound sqrt(6/fan_in)), zero biases."""
    if len(activations) != len(layer_dims) - 1:
        raise ShapeMismatch("need one activation per layer")
    for act in activations:
        if act not in _ACTIVATIONS:
            raise ValueError(f"unknown activation '{act}'")
    weights = []
    biases = []
    for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / d_in)
        weights.append(rng.gen.uniform(-bound, bound, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return Mlp(list(layer_dims), weights, biases, list(activations))


class SgdMomentum:
    """Classical momentum SGD updating parameter arrays in place."""

    def __init__(self, params: list[np.ndarray], lr: float = 0.01, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]):
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v += g
            p -= self.lr * v


def grad_check(build_loss, params: list[np.ndarray], rng: Rng,
               min_coords: int = 50, step: float = 1e-5) -> float:
    """Compare tape gradients to central finite differences.

    `build_loss` maps lifted parameter tensors to a scalar loss tensor and is
    re-invoked after each coordinate perturbation, so it must read the current
    parameter values. Returns the max relative error over a random subsample
    of at least `min_coords` coordinates (all coordinates if fewer exist),
    with relative error |a - n| / max(1e-8, |a| + |n|).
    """
    lifted = [Tensor(p, requires_grad=True) for p in params]
    loss = build_loss(lifted)
    if not np.all(np.isfinite(loss.data)):
        raise NonFiniteLoss("loss is not finite at the current parameters")
    loss.backward()
    analytic = [np.zeros_like(p) if t.grad is None else t.grad.copy()
                for p, t in zip(params, lifted)]

    sizes = [p.size for p in params]
    total = int(sum(sizes))
    n_coords = min(total, max(min_coords, 1))
    flat_choice = rng.gen.choice(total, size=n_coords, replace=False)

    worst = 0.0
    bounds = np.cumsum([0] + sizes)
    for flat in sorted(int(c) for c in flat_choice):
        which = int(np.searchsorted(bounds, flat, side="right")) - 1
        offset = flat - bounds[which]
        idx = np.unravel_index(offset, params[which].shape)
        original = params[which][idx]
        params[which][idx] = original + step
        f_plus = float(build_loss(lifted).data)
        params[which][idx] = original - step
        f_minus = float(build_loss(lifted).data)
        params[which][idx] = original
        numeric = (f_plus - f_minus) / (2.0 * step)
        a = float(analytic[which][idx])
        rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, rel)
    return worst


# --------------------------------------------------------------------------
# checkpoints

def _write_str(fh, text: str):
    raw = text.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def _read_exact(fh, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise FormatViolation("checkpoint truncated")
    return raw


def _read_str(fh) -> str:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, n).decode("utf-8")


def save_checkpoint(path, nets: list[tuple[str, Mlp]], scalars: list[tuple[str, float]] = ()):
    """Serialize named networks plus named scalar hyperparameters."""
    try:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", _VERSION))
            fh.write(struct.pack("<I", len(nets)))
            for name, net in nets:
                _write_str(fh, name)
                fh.write(struct.pack("<I", len(net.layer_dims)))
                fh.write(struct.pack(f"<{len(net.layer_dims)}I", *net.layer_dims))
                codes = [_ACTIVATIONS.index(a) for a in net.activations]
                fh.write(struct.pack(f"<{len(codes)}B", *codes))
                for w, b in zip(net.weights, net.biases):
                    fh.write(w.astype("<f8").tobytes(order="C"))
                    fh.write(b.astype("<f8").tobytes(order="C"))
            fh.write(struct.pack("<I", len(scalars)))
            for name, value in scalars:
                _write_str(fh, name)
                fh.write(struct.pack("<d", float(value)))
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> tuple[dict[str, Mlp], dict[str, float]]:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise IoFailure(f"cannot open checkpoint {path}: {exc}") from exc
    with fh:
        if _read_exact(fh, 4) != _MAGIC:
            raise FormatViolation("bad checkpoint magic")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != _VERSION:
            raise FormatViolation(f"unsupported checkpoint version {version}")
        (n_nets,) = struct.unpack("<I", _read_exact(fh, 4))
        nets: dict[str, Mlp] = {}
        for _ in range(n_nets):
            name = _read_str(fh)
            if name in nets:
                raise FormatViolation(f"duplicate network section '{name}'")
            (n_dims,) = struct.unpack("<I", _read_exact(fh, 4))
            dims = list(struct.unpack(f"<{n_dims}I", _read_exact(fh, 4 * n_dims)))
            codes = struct.unpack(f"<{n_dims - 1}B", _read_exact(fh, n_dims - 1))
            acts = []
            for code in codes:
                if code >= len(_ACTIVATIONS):
                    raise FormatViolation(f"unknown activation code {code}")
                acts.append(_ACTIVATIONS[code])
            weights = []
            biases = []
            for d_in, d_out in zip(dims[:-1], dims[1:]):
                raw = _read_exact(fh, 8 * d_in * d_out)
                weights.append(np.frombuffer(raw, dtype="<f8").reshape(d_in, d_out).copy())
                raw = _read_exact(fh, 8 * d_out)
                biases.append(np.frombuffer(raw, dtype="<f8").copy())
            nets[name] = Mlp(dims, weights, biases, acts)
        (n_scalars,) = struct.unpack("<I", _read_exact(fh, 4))
        scalars: dict[str, float] = {}
        for _ in range(n_scalars):
            name = _read_str(fh)
            (value,) = struct.unpack("<d", _read_exact(fh, 8))
            scalars[name] = value
    return nets, scalars
