"""Layer-level forward/backward math for the 1D generative-neuron engine.

The generative convolution replaces each scalar kernel weight of a plain
1D convolution with a degree-Q polynomial in the input sample (powers
q = 1..Q, no constant term; the layer bias covers the constant):

    out[k][m] = b[k] + sum_i sum_r sum_q w[i][k][r][q-1] * x[i][m + r - K//2]^q

with zero padding so the temporal length is preserved ('same', unit
stride). Q = 1 is exactly a plain convolution. Inputs are expected in
[-1, 1] (tanh outputs), where the truncated polynomial is a faithful
function approximator.

Feature maps are plain float64 arrays shaped (neurons, length); every
operation here also accepts a leading batch axis.
"""

from __future__ import annotations

import ctypes
from dataclasses import dataclass

import numpy as np


def _tune_allocator() -> None:
    """Keep glibc from mmap/munmap-ing the multi-MB window buffers.

    The packed-window matrices are tens of MB and reallocated every batch;
    with the default malloc thresholds each round trip is a fresh mmap and
    a page-fault storm that dominates the runtime. Raising the mmap and
    trim thresholds makes the arena recycle those blocks. No-op where
    mallopt is unavailable.
    """
    try:
        libc = ctypes.CDLL(None)
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


_tune_allocator()


@dataclass
class GenerativeConvLayer:
    """Per-connection K x Q polynomial kernels plus one bias per neuron."""

    in_neurons: int
    out_neurons: int
    kernel_size: int
    order: int
    weights: np.ndarray  # (in_neurons, out_neurons, kernel_size, order)
    biases: np.ndarray   # (out_neurons,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        expected = (self.in_neurons, self.out_neurons, self.kernel_size, self.order)
        if self.weights.shape != expected:
            raise ValueError(f"weights shape {self.weights.shape} != {expected}")
        if self.biases.shape != (self.out_neurons,):
            raise ValueError(f"biases shape {self.biases.shape} != ({self.out_neurons},)")
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise ValueError("layer parameters must be finite")


@dataclass
class DenseLayer:
    """Affine map: out = x @ weights + biases."""

    weights: np.ndarray  # (n_in, n_out)
    biases: np.ndarray   # (n_out,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[1],):
            raise ValueError("dense weights must be (n_in, n_out) with matching biases")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise ValueError("layer parameters must be finite")


@dataclass
class GradientBundle:
    """Gradients mirroring a layer's parameter shapes, plus the input-map gradient."""

    weight_grad: np.ndarray
    bias_grad: np.ndarray
    input_grad: np.ndarray | None


@dataclass
class PoolSwitches:
    """Argmax routing record from a pooling forward pass."""

    indices: np.ndarray  # offsets within each window (max pool) or along time (global)
    input_length: int
    factor: int


def taylor_window(y_window: np.ndarray, kernel: np.ndarray) -> float:
    """Polynomial response of one kernel window: sum_r sum_q k[r][q-1] * y[r]^q."""
    y = np.asarray(y_window, dtype=np.float64)
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2 or y.shape != (k.shape[0],):
        raise ValueError(f"window shape {y.shape} does not match kernel {k.shape}")
    q = np.arange(1, k.shape[1] + 1)
    return float(np.sum(k * y[:, None] ** q))


def _augment_powers(xtm: np.ndarray, order: int) -> np.ndarray:
    """Stack powers 1..Q along the trailing channel axis: (B, M, C) -> (B, M, C*Q)."""
    b, m, c = xtm.shape
    if order == 1:
        return xtm
    xaug = np.empty((b, m, c * order))
    xaug[..., :c] = xtm
    for q in range(1, order):
        np.multiply(xaug[..., (q - 1) * c:q * c], xtm, out=xaug[..., q * c:(q + 1) * c])
    return xaug


def _pack_windows(xtm: np.ndarray, kernel_size: int, pad_left: int) -> np.ndarray:
    """Time-major im2col: (B, M, C) -> (B*M, K*C) sliding-window rows.

    Zero-pads to length M + K - 1 (pad_left on the left), so row (b, m)
    holds the K consecutive padded time steps starting at m, channel-minor.
    Each row is one contiguous run of the padded buffer, which keeps this a
    plain overlapping memcpy.
    """
    b, m, c = xtm.shape
    xpad = np.zeros((b, m + kernel_size - 1, c))
    xpad[:, pad_left:pad_left + m, :] = xtm
    win = np.lib.stride_tricks.sliding_window_view(xpad, kernel_size, axis=1)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(b * m, kernel_size * c)


# Packed window matrices beyond the last cache level fall off a memory
# bandwidth cliff, so pack-and-multiply runs in batch slabs below this size.
_SLAB_ELEMS = 3_000_000


def _batch_step(m: int, width: int) -> int:
    return max(1, _SLAB_ELEMS // max(1, m * width))


def _pack_apply(xtm: np.ndarray, kernel_size: int, pad_left: int,
                mat: np.ndarray) -> np.ndarray:
    """Slab-wise windowed matmul: (B, M, C) x (K*C, O) -> (B, M, O)."""
    b, m, c = xtm.shape
    out = np.empty((b, m, mat.shape[1]))
    step = _batch_step(m, kernel_size * c)
    for s in range(0, b, step):
        e = min(b, s + step)
        cols = _pack_windows(xtm[s:e], kernel_size, pad_left)
        out[s:e] = (cols @ mat).reshape(e - s, m, -1)
    return out


def _pack_weight_grad(xtm: np.ndarray, gtm: np.ndarray, kernel_size: int,
                      pad_left: int) -> np.ndarray:
    """Slab-wise cols^T @ grad accumulation: returns (K*C, N).

    Slab size depends only on shapes, so the accumulation order (and the
    result, bit for bit) is invariant across runs and worker counts.
    """
    b, m, c = xtm.shape
    n = gtm.shape[-1]
    acc = np.zeros((kernel_size * c, n))
    step = _batch_step(m, kernel_size * c)
    for s in range(0, b, step):
        e = min(b, s + step)
        cols = _pack_windows(xtm[s:e], kernel_size, pad_left)
        acc += cols.T @ gtm[s:e].reshape((e - s) * m, n)
    return acc


def _forward_matrix(layer: GenerativeConvLayer) -> np.ndarray:
    """(K*Q*C, N) weight matrix matching _pack_windows' (tap, order, channel) columns."""
    c, n, k, q = layer.weights.shape
    return np.ascontiguousarray(layer.weights.transpose(2, 3, 0, 1)).reshape(k * q * c, n)


def _backward_matrix(layer: GenerativeConvLayer) -> np.ndarray:
    """(K*N, Q*C) tap-flipped matrix for the input-gradient convolution."""
    c, n, k, q = layer.weights.shape
    flipped = layer.weights[:, :, ::-1, :]
    return np.ascontiguousarray(flipped.transpose(2, 1, 3, 0)).reshape(k * n, q * c)


def _check_conv_input(layer: GenerativeConvLayer, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (2, 3) or x.shape[-2] != layer.in_neurons:
        raise ValueError(
            f"input shape {x.shape} incompatible with {layer.in_neurons} input neurons"
        )
    return x


def gen_conv_forward(layer: GenerativeConvLayer, x: np.ndarray) -> np.ndarray:
    """'same' generative convolution; accepts (C, M) or (B, C, M)."""
    x = _check_conv_input(layer, x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    b, c, m = x.shape
    xtm = np.ascontiguousarray(x.transpose(0, 2, 1))
    out = _pack_apply(_augment_powers(xtm, layer.order), layer.kernel_size,
                      layer.kernel_size // 2, _forward_matrix(layer))
    out += layer.biases
    out = np.ascontiguousarray(out.transpose(0, 2, 1))
    return out[0] if squeeze else out


def gen_conv_backward(layer: GenerativeConvLayer, x: np.ndarray,
                      out_grad: np.ndarray,
                      need_input_grad: bool = True) -> GradientBundle:
    """Exact analytic gradients of gen_conv_forward.

    weight grad of w[i][k][r][q-1] accumulates x[i][m+r-K//2]^q * out_grad[k][m];
    the input grad is the tap-flipped convolution of out_grad chained
    through q * w * x^(q-1). Gradients sum over any batch axis.
    """
    x = _check_conv_input(layer, x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
        out_grad = np.asarray(out_grad, dtype=np.float64)[None]
    else:
        out_grad = np.asarray(out_grad, dtype=np.float64)
    b, c, m = x.shape
    k, n, order = layer.kernel_size, layer.out_neurons, layer.order
    if out_grad.shape != (b, n, m):
        raise ValueError(f"out_grad shape {out_grad.shape} != {(b, n, m)}")

    gtm = np.ascontiguousarray(out_grad.transpose(0, 2, 1))  # (B, M, N)
    xtm = np.ascontiguousarray(x.transpose(0, 2, 1))
    xaug = _augment_powers(xtm, order)

    dwmat = _pack_weight_grad(xaug, gtm, k, k // 2)  # (K*Q*C, N)
    dw = np.ascontiguousarray(dwmat.reshape(k, order, c, n).transpose(2, 3, 0, 1))
    db = gtm.sum(axis=(0, 1))

    dx = None
    if need_input_grad:
        dxaug = _pack_apply(gtm, k, k - 1 - k // 2, _backward_matrix(layer))
        dxtm = dxaug[..., :c].copy()  # q = 1 term: derivative coefficient is 1
        for q in range(2, order + 1):
            dxtm += q * xaug[..., (q - 2) * c:(q - 1) * c] * dxaug[..., (q - 1) * c:q * c]
        dx = np.ascontiguousarray(dxtm.transpose(0, 2, 1))
        if squeeze:
            dx = dx[0]
    return GradientBundle(weight_grad=dw, bias_grad=db, input_grad=dx)


def maxpool_forward(x: np.ndarray, factor: int) -> tuple[np.ndarray, PoolSwitches]:
    """Non-overlapping max pooling along the last axis; ties pick the lowest index."""
    x = np.asarray(x, dtype=np.float64)
    if factor < 1:
        raise ValueError(f"pool factor must be >= 1, got {factor}")
    m = x.shape[-1]
    out_len = m // factor
    if out_len < 1:
        raise ValueError(f"input length {m} shorter than pool factor {factor}")
    win = x[..., :out_len * factor].reshape(*x.shape[:-1], out_len, factor)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, PoolSwitches(indices=idx, input_length=m, factor=factor)


def maxpool_backward(switches: PoolSwitches, out_grad: np.ndarray) -> np.ndarray:
    """Route each gradient to its window's argmax position, zeros elsewhere."""
    out_grad = np.asarray(out_grad, dtype=np.float64)
    idx = switches.indices
    if out_grad.shape != idx.shape:
        raise ValueError(f"out_grad shape {out_grad.shape} != indices {idx.shape}")
    f = switches.factor
    out_len = idx.shape[-1]
    win = np.zeros((*idx.shape, f))
    np.put_along_axis(win, idx[..., None], out_grad[..., None], axis=-1)
    dx = np.zeros((*idx.shape[:-1], switches.input_length))
    dx[..., :out_len * f] = win.reshape(*idx.shape[:-1], out_len * f)
    return dx


def global_pool(x: np.ndarray) -> tuple[np.ndarray, PoolSwitches]:
    """Max over the temporal axis per neuron; ties pick the lowest index."""
    x = np.asarray(x, dtype=np.float64)
    idx = x.argmax(axis=-1)
    out = np.take_along_axis(x, idx[..., None], axis=-1)[..., 0]
    return out, PoolSwitches(indices=idx, input_length=x.shape[-1], factor=x.shape[-1])


def global_pool_backward(switches: PoolSwitches, out_grad: np.ndarray) -> np.ndarray:
    """Route each neuron's gradient to its temporal argmax."""
    out_grad = np.asarray(out_grad, dtype=np.float64)
    idx = switches.indices
    if out_grad.shape != idx.shape:
        raise ValueError(f"out_grad shape {out_grad.shape} != indices {idx.shape}")
    dx = np.zeros((*idx.shape, switches.input_length))
    np.put_along_axis(dx, idx[..., None], out_grad[..., None], axis=-1)
    return dx


def tanh_forward(x: np.ndarray) -> np.ndarray:
    return np.tanh(np.asarray(x, dtype=np.float64))


def tanh_backward(activated: np.ndarray, out_grad: np.ndarray) -> np.ndarray:
    """Chain rule through tanh given its forward output: grad * (1 - tanh^2)."""
    return np.asarray(out_grad) * (1.0 - np.asarray(activated) ** 2)


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """Affine map; accepts (n_in,) or (B, n_in)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.weights.shape[0]:
        raise ValueError(
            f"input width {x.shape[-1]} != dense fan-in {layer.weights.shape[0]}"
        )
    return x @ layer.weights + layer.biases


def dense_backward(layer: DenseLayer, x: np.ndarray,
                   out_grad: np.ndarray) -> GradientBundle:
    """Standard affine gradients; sums over any batch axis."""
    x = np.asarray(x, dtype=np.float64)
    out_grad = np.asarray(out_grad, dtype=np.float64)
    squeeze = x.ndim == 1
    x2 = x[None] if squeeze else x
    g2 = out_grad[None] if squeeze else out_grad
    if g2.shape != (x2.shape[0], layer.weights.shape[1]):
        raise ValueError(f"out_grad shape {out_grad.shape} inconsistent with layer")
    dw = x2.T @ g2
    db = g2.sum(axis=0)
    dx = g2 @ layer.weights.T
    return GradientBundle(weight_grad=dw, bias_grad=db,
                          input_grad=dx[0] if squeeze else dx)


# --- finite-difference self-check -------------------------------------------

@dataclass
class GradCheckResult:
    """Worst deviation between analytic and central finite-difference gradients.

    Errors are max absolute deviation scaled by the largest gradient
    magnitude in the parameter group, so cancellation-prone tiny entries do
    not drown the comparison in finite-difference round-off.
    """

    max_rel_err: float
    per_kind: dict[str, float]
    trials: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def _fd_grad(f, arr: np.ndarray, step: float) -> np.ndarray:
    """Central finite differences of scalar f with respect to arr, in place."""
    grad = np.empty_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def _scaled_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def gradient_check(seed: int = 0, trials: int = 20, step: float = 1e-5,
                   tolerance: float = 1e-4) -> GradCheckResult:
    """Compare analytic gradients against central finite differences.

    Random small instances per layer kind; the scalar objective is the
    forward output projected onto a random vector, so its analytic gradient
    is one backward pass with that vector as out_grad.
    """
    rng = np.random.default_rng(seed)
    worst = {"gen_conv": 0.0, "dense": 0.0, "tanh": 0.0}

    for _ in range(trials):
        c = int(rng.integers(1, 4))
        n = int(rng.integers(1, 4))
        k = int(rng.integers(1, 6))
        q = int(rng.integers(1, 5))
        m = int(rng.integers(1, 17))
        layer = GenerativeConvLayer(
            c, n, k, q,
            weights=rng.uniform(-1, 1, (c, n, k, q)),
            biases=rng.uniform(-1, 1, n),
        )
        x = rng.uniform(-1, 1, (c, m))
        v = rng.uniform(-1, 1, (n, m))
        objective = lambda: float(np.sum(gen_conv_forward(layer, x) * v))
        bundle = gen_conv_backward(layer, x, v)
        for analytic, arr in ((bundle.weight_grad, layer.weights),
                              (bundle.bias_grad, layer.biases),
                              (bundle.input_grad, x)):
            err = _scaled_err(analytic, _fd_grad(objective, arr, step))
            worst["gen_conv"] = max(worst["gen_conv"], err)

    for _ in range(trials):
        fan_in = int(rng.integers(1, 9))
        fan_out = int(rng.integers(1, 9))
        batch = int(rng.integers(1, 5))
        layer = DenseLayer(rng.uniform(-1, 1, (fan_in, fan_out)),
                           rng.uniform(-1, 1, fan_out))
        x = rng.uniform(-1, 1, (batch, fan_in))
        v = rng.uniform(-1, 1, (batch, fan_out))
        objective = lambda: float(np.sum(dense_forward(layer, x) * v))
        bundle = dense_backward(layer, x, v)
        for analytic, arr in ((bundle.weight_grad, layer.weights),
                              (bundle.bias_grad, layer.biases),
                              (bundle.input_grad, x)):
            err = _scaled_err(analytic, _fd_grad(objective, arr, step))
            worst["dense"] = max(worst["dense"], err)

    for _ in range(trials):
        x = rng.uniform(-2, 2, int(rng.integers(1, 33)))
        v = rng.uniform(-1, 1, x.shape)
        objective = lambda: float(np.sum(tanh_forward(x) * v))
        analytic = tanh_backward(tanh_forward(x), v)
        err = _scaled_err(analytic, _fd_grad(objective, x, step))
        worst["tanh"] = max(worst["tanh"], err)

    return GradCheckResult(max_rel_err=max(worst.values()), per_kind=worst,
                           trials=trials, tolerance=tolerance)
