"""Fixed high-pass residual filters and two-branch feature enhancement.

Three 5x5 residual kernels (first-order, second-order, and the dense square
kernel, with divisors 2, 4, 12) extract perturbation residuals from an
image. Kernels are stored with integer taps and a separate divisor so the
zero-sum (high-pass) invariant holds exactly. Filtering is the CNN-style
cross-correlation with stride 1 and zero padding 2; each of the three output
channels sums one kernel's response over all input channels.

Each tap's contribution is accumulated relative to the window's center
pixel. Because the taps sum to zero this leaves the result unchanged, but it
makes the interior response of a constant image exactly zero in floating
point.

The enhanced feature of an image is the concatenation of a spatial-branch
encoding of the raw pixels and a frequency-branch encoding of the residual.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatViolation, ImageTooSmall, IoFailure, ShapeMismatch
from .nnkit import Mlp

KERNEL_ORDER1 = np.array([
    [0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0],
    [0, 1, -2, 1, 0],
    [0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0],
], dtype=float)

KERNEL_ORDER2 = np.array([
    [0, 0, 0, 0, 0],
    [0, -1, 2, -1, 0],
    [0, 2, -4, 2, 0],
    [0, -1, 2, -1, 0],
    [0, 0, 0, 0, 0],
], dtype=float)

KERNEL_SQUARE5 = np.array([
    [-1, 2, -2, 2, -1],
    [2, -6, 8, -6, 2],
    [-2, 8, -12, 8, -2],
    [2, -6, 8, -6, 2],
    [-1, 2, -2, 2, -1],
], dtype=float)

PEF_KERNELS: tuple[np.ndarray, ...] = (KERNEL_ORDER1, KERNEL_ORDER2, KERNEL_SQUARE5)
PEF_DIVISORS: tuple[float, ...] = (2.0, 4.0, 12.0)

for _k in PEF_KERNELS:
    assert _k.shape == (5, 5) and _k.sum() == 0.0, "PEF kernels must be zero-sum 5x5"


def check_image(img) -> np.ndarray:
    x = np.asarray(img, dtype=float)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ShapeMismatch(f"expected an (H, W, 3) image, got {x.shape}")
    if x.shape[0] < 5 or x.shape[1] < 5:
        raise ImageTooSmall(f"image {x.shape[:2]} is smaller than the 5x5 support")
    if not np.all(np.isfinite(x)):
        raise FormatViolation("image has non-finite values")
    return x


def _correlate_centered(channel: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Cross-correlate with zero padding 2, accumulating taps against the center."""
    h, w = channel.shape
    padded = np.zeros((h + 4, w + 4))
    padded[2:h + 2, 2:w + 2] = channel
    out = np.zeros((h, w))
    for u in range(5):
        for v in range(5):
            tap = kernel[u, v]
            if tap == 0.0:
                continue
            out += tap * (padded[u:u + h, v:v + w] - channel)
    return out


def pef_filter(img) -> np.ndarray:
    """Residual image: channel c is kernel c's response summed over input channels."""
    x = check_image(img)
    h, w, _ = x.shape
    out = np.zeros((h, w, 3))
    for c, (kernel, divisor) in enumerate(zip(PEF_KERNELS, PEF_DIVISORS)):
        acc = np.zeros((h, w))
        for ch in range(3):
            acc += _correlate_centered(x[:, :, ch], kernel)
        out[:, :, c] = acc / divisor
    return out


def afe_features(img, enc_spatial: Mlp, enc_freq: Mlp) -> np.ndarray:
    """Concatenated spatial and residual encodings, r = [S(x), F(x)]."""
    x = check_image(img)
    flat = x.reshape(1, -1)
    residual = pef_filter(x).reshape(1, -1)
    if enc_spatial.in_dim != flat.shape[1]:
        raise ShapeMismatch(
            f"spatial encoder expects dim {enc_spatial.in_dim}, image flattens to {flat.shape[1]}"
        )
    if enc_freq.in_dim != residual.shape[1]:
        raise ShapeMismatch(
            f"frequency encoder expects dim {enc_freq.in_dim}, residual flattens to {residual.shape[1]}"
        )
    s = enc_spatial.forward(flat)[0]
    f = enc_freq.forward(residual)[0]
    return np.concatenate([s, f])


# --------------------------------------------------------------------------
# image fixtures: u32 H, u32 W, then 3 planes of H*W little-endian float64

def save_image(img, path):
    x = check_image(img)
    h, w, _ = x.shape
    try:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<II", h, w))
            for c in range(3):
                fh.write(x[:, :, c].astype("<f8").tobytes(order="C"))
    except OSError as exc:
        raise IoFailure(f"cannot write image {path}: {exc}") from exc


def load_image(path) -> np.ndarray:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise IoFailure(f"cannot open image {path}: {exc}") from exc
    with fh:
        header = fh.read(8)
        if len(header) != 8:
            raise FormatViolation("image file truncated")
        h, w = struct.unpack("<II", header)
        planes = []
        for _ in range(3):
            raw = fh.read(8 * h * w)
            if len(raw) != 8 * h * w:
                raise FormatViolation("image file truncated")
            planes.append(np.frombuffer(raw, dtype="<f8").reshape(h, w))
    return np.stack(planes, axis=2)
