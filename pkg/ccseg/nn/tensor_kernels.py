"""
Dense tensor kernels.

Tensors are C-ordered float64 numpy arrays. Feature maps are laid out as
(channels, height, width). Every function here is pure: inputs are never
modified and identical inputs give bit-identical outputs.

Conventions fixed once for the whole toolkit:
- convolution is cross-correlation (no kernel flip) with zero padding;
- output extent of a convolution is floor((H + 2p - k) / s) + 1;
- bilinear resampling uses the align-corners-false convention.
"""

from typing import Literal, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ccseg.core.errors import ConfigurationError, ContractViolation
from ccseg.utils.validators import as_tensor, check_extent

ActivationKind = Literal["relu", "sigmoid", "tanh"]


def conv_output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    """Output extent of a convolution along one axis."""
    span = size + 2 * padding - kernel
    if span < 0:
        raise ConfigurationError(
            f"Convolution with kernel {kernel}, padding {padding} does not fit input extent {size}"
        )
    return span // stride + 1


def conv2d(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: Optional[np.ndarray] = None,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """
    2-D cross-correlation of a (C_in, H, W) map with a (C_out, C_in, kH, kW) kernel.

    Args:
        x: Input feature map
        kernel: Convolution weights; kH and kW must be odd
        bias: Per-output-channel bias, zeros when omitted
        stride: Positive step between windows
        padding: Zero padding added on every spatial border

    Returns:
        (C_out, H', W') feature map
    """
    x = as_tensor(x, "conv2d input", rank=3)
    kernel = as_tensor(kernel, "conv2d kernel", rank=4)
    c_out, c_in, kh, kw = kernel.shape

    check_extent("conv2d input", "C_in", x.shape[0], c_in)
    if kh % 2 == 0:
        raise ContractViolation(f"conv2d kernel: dimension 'kH' must be odd, got {kh}")
    if kw % 2 == 0:
        raise ContractViolation(f"conv2d kernel: dimension 'kW' must be odd, got {kw}")
    if stride < 1:
        raise ContractViolation(f"conv2d stride must be positive, got {stride}")
    if padding < 0:
        raise ContractViolation(f"conv2d padding must be nonnegative, got {padding}")

    if bias is None:
        bias = np.zeros(c_out)
    bias = as_tensor(bias, "conv2d bias", rank=1)
    check_extent("conv2d bias", "C_out", bias.shape[0], c_out)

    h_out = conv_output_extent(x.shape[1], kh, stride, padding)
    w_out = conv_output_extent(x.shape[2], kw, stride, padding)

    if kh == 1 and kw == 1 and padding == 0:
        sampled = x[:, ::stride, ::stride]
        flat = kernel.reshape(c_out, c_in) @ sampled.reshape(c_in, -1)
        return flat.reshape(c_out, h_out, w_out) + bias[:, None, None]

    padded = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    windows = windows[:, :h_out, :w_out]
    out = np.tensordot(kernel, windows, axes=([1, 2, 3], [0, 3, 4]))
    return out + bias[:, None, None]


def channel_mix(weight: np.ndarray, bias: Optional[np.ndarray], x: np.ndarray) -> np.ndarray:
    """1x1 convolution with the kernel given as a (C_out, C_in) matrix."""
    c_out, c_in = weight.shape
    check_extent("channel_mix input", "C_in", x.shape[0], c_in)
    flat = weight @ x.reshape(c_in, -1)
    if bias is not None:
        flat = flat + bias[:, None]
    return flat.reshape((c_out,) + x.shape[1:])


def softmax_axis(x: np.ndarray, axis: int) -> np.ndarray:
    """Numerically stable softmax along one axis."""
    x = as_tensor(x, "softmax input")
    if not -x.ndim <= axis < x.ndim:
        raise ContractViolation(f"softmax axis {axis} is invalid for shape {x.shape}")
    if x.shape[axis] < 1:
        raise ContractViolation(f"softmax axis {axis} has zero extent")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    weights = np.exp(shifted)
    return weights / np.sum(weights, axis=axis, keepdims=True)


def _resample_axis(in_size: int, out_size: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    scale = in_size / out_size
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, in_size - 1)
    return lo, hi, src - lo


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """
    Resize a (C, H, W) map with bilinear interpolation (align_corners=False).

    Interpolation is written as a + (b - a) * t so that constant maps stay
    exactly constant.
    """
    x = as_tensor(x, "bilinear_resize input", rank=3)
    if out_h < 1 or out_w < 1:
        raise ContractViolation(f"bilinear_resize target extent must be >= 1, got {out_h}x{out_w}")
    _, h, w = x.shape
    if (out_h, out_w) == (h, w):
        return x.copy()

    y0, y1, fy = _resample_axis(h, out_h)
    x0, x1, fx = _resample_axis(w, out_w)

    rows_lo = x[:, y0, :]
    rows_hi = x[:, y1, :]
    rows = rows_lo + (rows_hi - rows_lo) * fy[None, :, None]
    left = rows[:, :, x0]
    right = rows[:, :, x1]
    return left + (right - left) * fx[None, None, :]


def activation(x: np.ndarray, kind: ActivationKind) -> np.ndarray:
    """Elementwise relu, sigmoid or tanh."""
    x = as_tensor(x, "activation input")
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "sigmoid":
        return expit(x)
    if kind == "tanh":
        return np.tanh(x)
    raise ContractViolation(f"Unknown activation kind: {kind}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of (M, K) and (K, N) tensors."""
    a = as_tensor(a, "matmul left operand", rank=2)
    b = as_tensor(b, "matmul right operand", rank=2)
    check_extent("matmul right operand", "K", b.shape[0], a.shape[1])
    return a @ b
