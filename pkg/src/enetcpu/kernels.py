"""CPU kernels for every operator the network graph can contain.

All kernels take and return float32 CHW arrays.  Convolutions contract in
float64 and round back to float32 once, so results are deterministic
run-to-run and land within one float32 rounding of an exact-accumulation
reference regardless of BLAS summation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CorruptIndicesError, ShapeError

F32 = np.float32


@dataclass(frozen=True)
class ConvParams:
    """Static geometry of a convolution node.

    Kernel dims live here (not just in the weight array) so shape inference
    and cost analysis work without weights.  dilation > 1 is only supported
    at stride 1, which is the only combination the architecture uses.
    """

    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    pad_h: int = 0
    pad_w: int = 0
    dilation: int = 1
    has_bias: bool = False
    out_pad: int = 0  # transposed convolutions only

    def __post_init__(self):
        if self.out_channels < 1:
            raise ShapeError(f"out_channels must be >= 1, got {self.out_channels}")
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ShapeError(f"kernel dims must be >= 1, got {self.kernel_h}x{self.kernel_w}")
        if self.stride < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")
        if self.pad_h < 0 or self.pad_w < 0:
            raise ShapeError(f"padding must be >= 0, got ({self.pad_h}, {self.pad_w})")
        if self.dilation < 1:
            raise ShapeError(f"dilation must be >= 1, got {self.dilation}")
        if self.dilation > 1 and self.stride != 1:
            raise ShapeError("dilation > 1 requires stride 1")
        if not 0 <= self.out_pad < self.stride:
            raise ShapeError(f"out_pad must be in [0, stride), got {self.out_pad}")

    def conv_out_hw(self, h: int, w: int) -> tuple[int, int]:
        """Output dims of a forward convolution over an h x w input."""
        eff_kh = self.dilation * (self.kernel_h - 1) + 1
        eff_kw = self.dilation * (self.kernel_w - 1) + 1
        oh = (h + 2 * self.pad_h - eff_kh) // self.stride + 1
        ow = (w + 2 * self.pad_w - eff_kw) // self.stride + 1
        if h + 2 * self.pad_h < eff_kh or w + 2 * self.pad_w < eff_kw:
            raise ShapeError(
                f"kernel {eff_kh}x{eff_kw} does not fit {h}x{w} input with "
                f"padding ({self.pad_h}, {self.pad_w})"
            )
        return oh, ow

    def tconv_out_hw(self, h: int, w: int) -> tuple[int, int]:
        """Output dims of a transposed convolution over an h x w input."""
        oh = (h - 1) * self.stride - 2 * self.pad_h + self.kernel_h + self.out_pad
        ow = (w - 1) * self.stride - 2 * self.pad_w + self.kernel_w + self.out_pad
        if oh < 1 or ow < 1:
            raise ShapeError(f"transposed conv output would be {oh}x{ow}")
        return oh, ow


class PoolResult(NamedTuple):
    """Pooled activations plus the flat source index of each maximum."""

    values: np.ndarray
    indices: np.ndarray


@dataclass(frozen=True)
class BnParams:
    """Inference-time batch normalization statistics for one layer."""

    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float

    def __post_init__(self):
        n = len(self.gamma)
        for name in ("beta", "mean", "var"):
            if len(getattr(self, name)) != n:
                raise ShapeError(f"batchnorm {name} length != gamma length {n}")
        if self.eps < 0:
            raise ShapeError(f"batchnorm eps must be >= 0, got {self.eps}")
        if np.any(np.asarray(self.var) < 0):
            raise ShapeError("batchnorm variance must be non-negative")
        if np.any(np.asarray(self.var, dtype=np.float64) + self.eps <= 0):
            raise ShapeError("batchnorm var + eps must be positive")


def _chw(x: np.ndarray, what: str = "input") -> np.ndarray:
    if x.ndim != 3:
        raise ShapeError(f"{what} must be CHW, got ndim={x.ndim}")
    return np.ascontiguousarray(x, dtype=F32)


def _contract(xp: np.ndarray, w: np.ndarray, stride: int, dilation: int) -> np.ndarray:
    """Windowed tensor contraction over an already-padded input, float64."""
    kh, kw = w.shape[2], w.shape[3]
    eff_kh = dilation * (kh - 1) + 1
    eff_kw = dilation * (kw - 1) + 1
    win = sliding_window_view(xp, (eff_kh, eff_kw), axis=(1, 2))
    win = win[:, ::stride, ::stride, ::dilation, ::dilation]
    return np.tensordot(w.astype(np.float64), win.astype(np.float64),
                        axes=([1, 2, 3], [0, 3, 4]))


def conv2d(x: np.ndarray, w: np.ndarray, bias: Optional[np.ndarray],
           params: ConvParams) -> np.ndarray:
    """2D convolution with zero padding, optional dilation and bias."""
    x = _chw(x)
    if w.ndim != 4:
        raise ShapeError(f"conv weight must be 4D (out,in,kh,kw), got ndim={w.ndim}")
    oc, ic, kh, kw = w.shape
    if (oc, kh, kw) != (params.out_channels, params.kernel_h, params.kernel_w):
        raise ShapeError(
            f"weight shape {w.shape} disagrees with params "
            f"({params.out_channels},{params.kernel_h},{params.kernel_w})"
        )
    if x.shape[0] != ic:
        raise ShapeError(f"input has {x.shape[0]} channels, weight expects {ic}")
    if params.has_bias != (bias is not None):
        raise ShapeError("bias presence does not match params.has_bias")
    if bias is not None and bias.shape != (oc,):
        raise ShapeError(f"bias must be ({oc},), got {bias.shape}")
    params.conv_out_hw(x.shape[1], x.shape[2])  # raises if kernel does not fit
    xp = np.pad(x, ((0, 0), (params.pad_h, params.pad_h), (params.pad_w, params.pad_w)))
    out = _contract(xp, np.ascontiguousarray(w, dtype=F32), params.stride, params.dilation)
    if bias is not None:
        out += bias.astype(np.float64)[:, None, None]
    return np.ascontiguousarray(out.astype(F32))


def _pad_or_crop(a: np.ndarray, top: int, bottom: int, left: int, right: int) -> np.ndarray:
    """np.pad that also accepts negative amounts (crop)."""
    if top < 0:
        a, top = a[:, -top:, :], 0
    if bottom < 0:
        a, bottom = a[:, : a.shape[1] + bottom, :], 0
    if left < 0:
        a, left = a[:, :, -left:], 0
    if right < 0:
        a, right = a[:, :, : a.shape[2] + right], 0
    return np.pad(a, ((0, 0), (top, bottom), (left, right)))


def conv_transpose2d(x: np.ndarray, w: np.ndarray, bias: Optional[np.ndarray],
                     stride: int, pad: int, out_pad: int = 0) -> np.ndarray:
    """Transposed convolution (the adjoint of conv2d with the same weights).

    Weight layout is (in_channels, out_channels, kh, kw).  out_pad grows the
    bottom/right edge by up to stride-1 rows/cols so even output sizes are
    reachable at stride 2 with odd kernels.
    """
    x = _chw(x)
    if w.ndim != 4:
        raise ShapeError(f"transposed conv weight must be 4D, got ndim={w.ndim}")
    ic, oc, kh, kw = w.shape
    if x.shape[0] != ic:
        raise ShapeError(f"input has {x.shape[0]} channels, weight expects {ic}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"bad stride/pad ({stride}, {pad})")
    if not 0 <= out_pad < stride:
        raise ShapeError(f"out_pad must be in [0, stride), got {out_pad}")
    if bias is not None and bias.shape != (oc,):
        raise ShapeError(f"bias must be ({oc},), got {bias.shape}")
    _, h, wd = x.shape
    oh = (h - 1) * stride - 2 * pad + kh + out_pad
    ow = (wd - 1) * stride - 2 * pad + kw + out_pad
    if oh < 1 or ow < 1:
        raise ShapeError(f"transposed conv output would be {oh}x{ow}")
    # scatter == conv of the zero-stuffed input with the flipped kernel
    stuffed = np.zeros((ic, (h - 1) * stride + 1, (wd - 1) * stride + 1), dtype=F32)
    stuffed[:, ::stride, ::stride] = x
    stuffed = _pad_or_crop(stuffed, kh - 1 - pad, kh - 1 - pad + out_pad,
                           kw - 1 - pad, kw - 1 - pad + out_pad)
    w_eq = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3), dtype=F32)
    out = _contract(stuffed, w_eq, stride=1, dilation=1)
    if bias is not None:
        out += bias.astype(np.float64)[:, None, None]
    return np.ascontiguousarray(out.astype(F32))


def conv_asymmetric5(x: np.ndarray, w5x1: np.ndarray, w1x5: np.ndarray,
                     bias: Optional[np.ndarray]) -> np.ndarray:
    """Separable 5x5 convolution: a 5x1 pass then a 1x5 pass, one bias.

    Padding is fixed at (2,0) and (0,2) so spatial dims are preserved; the
    optional bias lands after the second pass.
    """
    if w5x1.ndim != 4 or w5x1.shape[2:] != (5, 1):
        raise ShapeError(f"first kernel must be (*,*,5,1), got {w5x1.shape}")
    if w1x5.ndim != 4 or w1x5.shape[2:] != (1, 5):
        raise ShapeError(f"second kernel must be (*,*,1,5), got {w1x5.shape}")
    mid = w5x1.shape[0]
    if w1x5.shape[1] != mid:
        raise ShapeError(
            f"kernel chain mismatch: first produces {mid} channels, "
            f"second consumes {w1x5.shape[1]}"
        )
    p1 = ConvParams(out_channels=mid, kernel_h=5, kernel_w=1, pad_h=2, pad_w=0)
    p2 = ConvParams(out_channels=w1x5.shape[0], kernel_h=1, kernel_w=5,
                    pad_h=0, pad_w=2, has_bias=bias is not None)
    return conv2d(conv2d(x, w5x1, None, p1), w1x5, bias, p2)


def maxpool2x2(x: np.ndarray) -> PoolResult:
    """2x2 stride-2 max pooling; records each max's flat index in the source
    plane (row-major), ties broken toward the smallest index."""
    x = _chw(x)
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even dims, got {h}x{w}")
    windows = (x.reshape(c, h // 2, 2, w // 2, 2)
                .transpose(0, 1, 3, 2, 4)
                .reshape(c, h // 2, w // 2, 4))
    # window cells in (wy, wx) order are strictly increasing in flat source
    # index, so argmax's first-occurrence rule is the tie-break we want
    k = windows.argmax(axis=3)
    values = np.take_along_axis(windows, k[..., None], axis=3)[..., 0]
    yy = np.arange(h // 2)[None, :, None]
    xx = np.arange(w // 2)[None, None, :]
    indices = ((2 * yy + (k >> 1)) * w + (2 * xx + (k & 1))).astype(np.int64)
    return PoolResult(np.ascontiguousarray(values), np.ascontiguousarray(indices))


def max_unpool2x2(values: np.ndarray, indices: np.ndarray,
                  out_h: int, out_w: int) -> np.ndarray:
    """Scatter pooled values back to their recorded positions, zero-fill."""
    values = _chw(values, "unpool values")
    if indices.shape != values.shape:
        raise ShapeError(
            f"indices shape {indices.shape} != values shape {values.shape}"
        )
    c, h, w = values.shape
    if out_h != 2 * h or out_w != 2 * w:
        raise ShapeError(
            f"unpool target {out_h}x{out_w} must be exactly double {h}x{w}"
        )
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= out_h * out_w):
        raise CorruptIndicesError(
            f"pool indices outside [0, {out_h * out_w}) for {out_h}x{out_w} plane"
        )
    out = np.zeros((c, out_h * out_w), dtype=F32)
    np.put_along_axis(out, idx.reshape(c, -1), values.reshape(c, -1), axis=1)
    return out.reshape(c, out_h, out_w)


def batchnorm_infer(x: np.ndarray, p: BnParams) -> np.ndarray:
    """Frozen-statistics batch normalization: gamma*(x-mean)/sqrt(var+eps)+beta."""
    x = _chw(x)
    if x.shape[0] != len(p.gamma):
        raise ShapeError(f"batchnorm has {len(p.gamma)} channels, input {x.shape[0]}")
    scale = np.asarray(p.gamma, dtype=np.float64) / np.sqrt(
        np.asarray(p.var, dtype=np.float64) + p.eps)
    shift = np.asarray(p.beta, dtype=np.float64) - np.asarray(p.mean, dtype=np.float64) * scale
    out = x.astype(np.float64) * scale[:, None, None] + shift[:, None, None]
    return np.ascontiguousarray(out.astype(F32))


def prelu(x: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    """Per-channel parametric ReLU: x if x >= 0 else slope[c] * x."""
    x = _chw(x)
    if slopes.ndim != 1 or slopes.shape[0] != x.shape[0]:
        raise ShapeError(
            f"prelu needs one slope per channel ({x.shape[0]}), got {slopes.shape}"
        )
    s = np.ascontiguousarray(slopes, dtype=F32)[:, None, None]
    return np.where(x >= 0, x, x * s)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise residual merge."""
    a, b = _chw(a), _chw(b, "second addend")
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stack b's channels after a's; spatial dims must agree."""
    a, b = _chw(a), _chw(b, "second input")
    if a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat spatial mismatch: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=0)


def pad_channels(x: np.ndarray, target_channels: int) -> np.ndarray:
    """Append zero-filled channel planes up to target_channels."""
    x = _chw(x)
    c = x.shape[0]
    if target_channels < c:
        raise ShapeError(f"cannot pad {c} channels down to {target_channels}")
    if target_channels == c:
        return x
    out = np.zeros((target_channels, x.shape[1], x.shape[2]), dtype=F32)
    out[:c] = x
    return out


def spatial_dropout_infer(x: np.ndarray) -> np.ndarray:
    """Inference-mode spatial dropout.  Inverted dropout rescales at train
    time, so at inference this is the identity; it exists as a kernel so an
    un-optimized graph still executes."""
    return _chw(x)
