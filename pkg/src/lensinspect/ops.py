"""Deterministic NCHW tensor primitives.

Every operation consumes and produces contiguous float32 arrays of shape
(n, c, h, w). Outputs are finite for finite inputs, and each op is
bit-reproducible: repeated calls on identical operands yield identical
bytes. Convolution is evaluated as a single patch-matrix product with a
fixed schedule; no op exposes an internal parallelism knob.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Tensor = np.ndarray
"""4-D float32 array in (n, c, h, w) row-major order."""


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


def as_tensor(x, name: str = "input") -> Tensor:
    """Validate/coerce `x` into a contiguous float32 (n, c, h, w) array."""
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if arr.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (n, c, h, w), got shape {arr.shape}")
    return arr


def _as_channel_vector(v, channels: int, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(v, dtype=np.float64).reshape(-1)
    if arr.shape[0] != channels:
        raise ShapeError(
            f"{name} length {arr.shape[0]} does not match channel count {channels}"
        )
    return arr


@dataclass(frozen=True, eq=False)
class ConvParams:
    """Convolution weights plus geometry.

    weights has shape (out_channels, in_channels, kh, kw); bias has one
    entry per output channel. Output spatial size follows
    floor((h + 2*ph - kh) / sh) + 1 and likewise for width.
    """

    weights: np.ndarray
    bias: np.ndarray
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float32)
        b = np.ascontiguousarray(self.bias, dtype=np.float32).reshape(-1)
        if w.ndim != 4:
            raise ShapeError(f"weights must be 4-D (oc, ic, kh, kw), got {w.shape}")
        if b.shape[0] != w.shape[0]:
            raise ShapeError(
                f"bias length {b.shape[0]} does not match out_channels {w.shape[0]}"
            )
        if min(self.stride) < 1:
            raise ShapeError(f"stride must be positive, got {self.stride}")
        if min(self.padding) < 0:
            raise ShapeError(f"padding must be non-negative, got {self.padding}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, params: ConvParams) -> Tensor:
    """2-D cross-correlation with zero padding and per-channel bias.

    Each output element is the dot product of the receptive field with
    the kernel plus bias. The whole product is computed by one float32
    patch-matrix multiplication, so results are identical across calls.
    """
    x = as_tensor(x)
    n, c, h, w = x.shape
    if c != params.in_channels:
        raise ShapeError(
            f"conv2d: input has {c} channels but weights expect "
            f"{params.in_channels} (input {x.shape}, weights {params.weights.shape})"
        )
    kh, kw = params.kernel
    sh, sw = params.stride
    ph, pw = params.padding
    oh = conv_output_size(h, kh, sh, ph)
    ow = conv_output_size(w, kw, sw, pw)
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} stride {sh}x{sw} pad {ph}x{pw} does not fit "
            f"input {x.shape}"
        )
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    # (n, c, oh, ow, kh, kw) -> (n*oh*ow, c*kh*kw), patch layout (c, kh, kw)
    patches = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    wmat = params.weights.reshape(params.out_channels, c * kh * kw)
    out = patches @ wmat.T
    out += params.bias
    return np.ascontiguousarray(out.reshape(n, oh, ow, -1).transpose(0, 3, 1, 2))


def batchnorm(x: Tensor, gamma, beta, mean, var, eps: float) -> Tensor:
    """Inference-time batch normalization: gamma*(x-mean)/sqrt(var+eps)+beta."""
    x = as_tensor(x)
    if eps <= 0:
        raise ValueError(f"batchnorm: eps must be positive, got {eps}")
    c = x.shape[1]
    g = _as_channel_vector(gamma, c, "gamma")
    b = _as_channel_vector(beta, c, "beta")
    m = _as_channel_vector(mean, c, "mean")
    v = _as_channel_vector(var, c, "var")
    scale = (g / np.sqrt(v + eps)).astype(np.float32)
    shift = (b - m * g / np.sqrt(v + eps)).astype(np.float32)
    return x * scale[None, :, None, None] + shift[None, :, None, None]


def silu(x: Tensor) -> Tensor:
    """Elementwise x * sigmoid(x)."""
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        # exp(-x) may overflow to inf for very negative x; x/inf -> 0, no NaN.
        return x / (1.0 + np.exp(-x, dtype=np.float32))


def maxpool2d(x: Tensor, kernel: int, stride: int, padding: int) -> Tensor:
    """Max pooling with -inf padding (pad cells never win the max)."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if kernel < 1 or stride < 1 or padding < 0:
        raise ShapeError(
            f"maxpool2d: bad geometry kernel={kernel} stride={stride} padding={padding}"
        )
    if padding >= kernel:
        raise ShapeError(
            f"maxpool2d: padding {padding} must be smaller than kernel {kernel}"
        )
    if kernel > h + 2 * padding or kernel > w + 2 * padding:
        raise ShapeError(
            f"maxpool2d: kernel {kernel} larger than padded input {x.shape} "
            f"with padding {padding}"
        )
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding,) * 2, (padding,) * 2),
                   constant_values=-np.inf)
    windows = sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.ascontiguousarray(windows.max(axis=(4, 5)))


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Replicate every element into a 2x2 block: (n, c, h, w) -> (n, c, 2h, 2w)."""
    x = as_tensor(x)
    return np.ascontiguousarray(x.repeat(2, axis=2).repeat(2, axis=3))


def concat_channels(parts: list[Tensor]) -> Tensor:
    """Concatenate along the channel axis; all parts must share (n, h, w)."""
    if not parts:
        raise ShapeError("concat_channels: need at least one tensor")
    arrs = [as_tensor(p, f"parts[{i}]") for i, p in enumerate(parts)]
    base = arrs[0].shape
    for i, a in enumerate(arrs[1:], start=1):
        if (a.shape[0], a.shape[2], a.shape[3]) != (base[0], base[2], base[3]):
            raise ShapeError(
                f"concat_channels: parts[{i}] shape {a.shape} does not share "
                f"(n, h, w) with parts[0] shape {base}"
            )
    return np.ascontiguousarray(np.concatenate(arrs, axis=1))


def split_channels(x: Tensor, sizes: list[int]) -> list[Tensor]:
    """Slice contiguous channel groups of the given sizes, in order."""
    x = as_tensor(x)
    if any(s <= 0 for s in sizes):
        raise ShapeError(f"split_channels: sizes must be positive, got {sizes}")
    if sum(sizes) != x.shape[1]:
        raise ShapeError(
            f"split_channels: sizes {sizes} sum to {sum(sizes)} but input has "
            f"{x.shape[1]} channels"
        )
    bounds = np.cumsum(sizes)[:-1]
    return [np.ascontiguousarray(p) for p in np.split(x, bounds, axis=1)]


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two identically shaped tensors."""
    a = as_tensor(a, "a")
    b = as_tensor(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return a + b
