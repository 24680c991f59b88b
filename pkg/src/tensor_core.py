from typing import Callable, Iterable, NamedTuple

import numpy as np
import numpy.typing as npt

# Dense tensors are plain numpy arrays in N,C,H,W row-major layout.
Tensor = npt.NDArray[np.floating]

DTYPE = np.float32
KERNEL_SIZE = 3


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class Shape4(NamedTuple):
    n: int
    c: int
    h: int
    w: int

    @classmethod
    def of(cls, x: np.ndarray) -> "Shape4":
        if x.ndim != 4:
            raise DimensionError(f"Expected a rank-4 N,C,H,W tensor, got shape {x.shape}.")
        shape = cls(*(int(d) for d in x.shape))
        if min(shape) <= 0:
            raise DimensionError(f"All N,C,H,W dimensions must be positive, got {tuple(shape)}.")
        return shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}.")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}.")
    return a @ b


def _im2col(x: Tensor) -> Tensor:
    """Unfold 3x3 "same" neighbourhoods into columns of shape [n, c*9, h*w]."""
    n, c, h, w = Shape4.of(x)
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((n, c, KERNEL_SIZE, KERNEL_SIZE, h, w), dtype=x.dtype)
    for i in range(KERNEL_SIZE):
        for j in range(KERNEL_SIZE):
            cols[:, :, i, j] = padded[:, :, i : i + h, j : j + w]
    return cols.reshape(n, c * KERNEL_SIZE * KERNEL_SIZE, h * w)


def _col2im(cols: Tensor, shape: Shape4) -> Tensor:
    n, c, h, w = shape
    cols = cols.reshape(n, c, KERNEL_SIZE, KERNEL_SIZE, h, w)
    padded = np.zeros((n, c, h + 2, w + 2), dtype=cols.dtype)
    for i in range(KERNEL_SIZE):
        for j in range(KERNEL_SIZE):
            padded[:, :, i : i + h, j : j + w] += cols[:, :, i, j]
    return padded[:, :, 1:-1, 1:-1]


def _check_conv_operands(x: Tensor, kernels: Tensor, bias: Tensor) -> Shape4:
    shape = Shape4.of(x)
    if kernels.ndim != 4 or kernels.shape[2:] != (KERNEL_SIZE, KERNEL_SIZE):
        raise DimensionError(f"conv2d kernels must be [cout, cin, 3, 3], got {kernels.shape}.")
    if kernels.shape[1] != shape.c:
        raise DimensionError(
            f"conv2d input has {shape.c} channels but kernels {kernels.shape} expect {kernels.shape[1]}."
        )
    if bias.shape != (kernels.shape[0],):
        raise DimensionError(f"conv2d bias must be [{kernels.shape[0]}], got {bias.shape}.")
    return shape


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, padding: str = "same") -> Tensor:
    """3x3 cross-correlation with one-pixel zero padding plus per-channel bias.

    Spatial size is preserved; the kernel is not flipped.
    """
    if padding != "same":
        raise DimensionError(f"Only 'same' padding is supported, got {padding!r}.")
    n, _, h, w = _check_conv_operands(x, kernels, bias)
    cols = _im2col(x)
    out = np.matmul(kernels.reshape(kernels.shape[0], -1), cols)
    out += bias[None, :, None]
    return out.reshape(n, kernels.shape[0], h, w)


def conv2d_backward(
    grad_out: Tensor, x: Tensor, kernels: Tensor
) -> tuple[Tensor, Tensor, Tensor]:
    shape = Shape4.of(x)
    cout = kernels.shape[0]
    cols = _im2col(x)
    grad_flat = grad_out.reshape(shape.n, cout, shape.h * shape.w)
    grad_kernels = np.tensordot(grad_flat, cols, axes=([0, 2], [0, 2])).reshape(kernels.shape)
    grad_bias = grad_flat.sum(axis=(0, 2))
    grad_cols = np.matmul(kernels.reshape(cout, -1).T, grad_flat)
    return _col2im(grad_cols, shape), grad_kernels, grad_bias


def _windows(x: Tensor) -> Tensor:
    n, c, h, w = Shape4.of(x)
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2d needs even spatial dimensions, got {h}x{w}.")
    return (
        x.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )


def maxpool2d(x: Tensor) -> tuple[Tensor, npt.NDArray[np.intp]]:
    """2x2 stride-2 max pooling.

    Returns the pooled tensor and, per output cell, the window-local argmax
    (0..3, row-major within the window; first maximum wins on ties).
    """
    windows = _windows(x)
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool2d_backward(
    grad_out: Tensor, argmax: npt.NDArray[np.intp], input_shape: tuple[int, ...]
) -> Tensor:
    n, c, h, w = input_shape
    grad_windows = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad_out.dtype)
    np.put_along_axis(grad_windows, argmax[..., None], grad_out[..., None], axis=-1)
    return (
        grad_windows.reshape(n, c, h // 2, w // 2, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h, w)
    )


def reduce_mean_var(x: Tensor, axes: Iterable[int], eps: float) -> tuple[Tensor, Tensor]:
    """Mean and biased variance over `axes`, reduced axes kept as size 1.

    `eps` is the stability constant callers add to the variance before
    taking a square root; it is validated here so every normalization
    shares one contract.
    """
    axes = tuple(axes)
    if not axes:
        raise DimensionError("reduce_mean_var needs at least one axis.")
    if any(not -x.ndim <= a < x.ndim for a in axes):
        raise DimensionError(f"Axes {axes} are invalid for a rank-{x.ndim} tensor.")
    axes = tuple(sorted({a % x.ndim for a in axes}))
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}.")
    mean = x.mean(axis=axes, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=axes, keepdims=True)
    return mean, var


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = Shape4.of(a), Shape4.of(b)
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w):
        raise DimensionError(f"concat_channels needs matching N,H,W, got {a.shape} and {b.shape}.")
    return np.concatenate([a, b], axis=1)


def finite_difference_grad(
    f: Callable[[Tensor], float], x: Tensor, eps: float = 1e-3
) -> Tensor:
    """Central-difference gradient of a scalar function, one element at a time.

    Perturbations are applied to a float64 copy of `x`.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}.")
    point = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(point)
    flat_point = point.reshape(-1)
    flat_grad = grad.reshape(-1)
    for i in range(flat_point.size):
        original = flat_point[i]
        flat_point[i] = original + eps
        plus = float(f(point))
        flat_point[i] = original - eps
        minus = float(f(point))
        flat_point[i] = original
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NumericError(f"f returned a non-finite value while perturbing element {i}.")
        flat_grad[i] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(a: Tensor, b: Tensor) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))
