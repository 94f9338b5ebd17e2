"""Classifier assembly: configuration, inference, complexity, serialization.

The network is three generative convolution stages (conv -> max pool ->
tanh), a global max pool that flattens to one scalar per neuron, and a
two-layer tanh MLP. With order Q = 1 this is exactly a compact 1D CNN.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .errors import FormatError
from .signal import Frame

MODEL_MAGIC = "SONN1"

DEFAULT_KERNEL_POOL = ((41, 8), (41, 8), (9, 2))


@dataclass(frozen=True)
class OpLayerSpec:
    """One generative convolution stage: width, kernel, pool factor, order."""

    neurons: int
    kernel_size: int
    pool_factor: int
    order: int

    def __post_init__(self):
        for name in ("neurons", "kernel_size", "pool_factor", "order"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass(frozen=True)
class NetworkConfig:
    input_channels: int = 2
    frame_len: int = 1000
    op_layers: tuple[OpLayerSpec, ...] = (
        OpLayerSpec(16, 41, 8, 1), OpLayerSpec(12, 41, 8, 1), OpLayerSpec(8, 9, 2, 1),
    )
    mlp_hidden: int = 16
    n_classes: int = 4

    def __post_init__(self):
        for name in ("input_channels", "frame_len", "mlp_hidden", "n_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.op_layers:
            raise ValueError("at least one operational layer required")
        self.temporal_trace()  # raises if any stage collapses below 1

    def temporal_trace(self) -> list[int]:
        """Temporal lengths after each pool stage, starting from frame_len."""
        trace = [self.frame_len]
        m = self.frame_len
        for spec in self.op_layers:
            m = m // spec.pool_factor  # 'same' conv preserves m
            if m < 1:
                raise ValueError(
                    f"pool factor {spec.pool_factor} collapses length below 1"
                )
            trace.append(m)
        return trace


def default_config(q: int = 1, widths: tuple[int, ...] = (16, 12, 8),
                   mlp_hidden: int = 16, input_channels: int = 2,
                   frame_len: int = 1000, n_classes: int = 4) -> NetworkConfig:
    """Standard 3-stage configuration with kernels 41/41/9 and pools 8/8/2."""
    if len(widths) != len(DEFAULT_KERNEL_POOL):
        raise ValueError(f"expected {len(DEFAULT_KERNEL_POOL)} widths, got {len(widths)}")
    layers = tuple(
        OpLayerSpec(w, k, p, q) for w, (k, p) in zip(widths, DEFAULT_KERNEL_POOL)
    )
    return NetworkConfig(input_channels=input_channels, frame_len=frame_len,
                         op_layers=layers, mlp_hidden=mlp_hidden, n_classes=n_classes)


@dataclass
class Model:
    config: NetworkConfig
    conv_layers: list[nn.GenerativeConvLayer]
    dense_layers: list[nn.DenseLayer]
    version: str = "1"

    def __post_init__(self):
        cfg = self.config
        if len(self.conv_layers) != len(cfg.op_layers) or len(self.dense_layers) != 2:
            raise ValueError("layer list does not match configuration")
        prev = cfg.input_channels
        for layer, spec in zip(self.conv_layers, cfg.op_layers):
            if (layer.in_neurons, layer.out_neurons) != (prev, spec.neurons) \
                    or layer.kernel_size != spec.kernel_size or layer.order != spec.order:
                raise ValueError("convolution layer inconsistent with configuration")
            prev = spec.neurons
        d1, d2 = self.dense_layers
        if d1.weights.shape != (prev, cfg.mlp_hidden) \
                or d2.weights.shape != (cfg.mlp_hidden, cfg.n_classes):
            raise ValueError("dense layer inconsistent with configuration")


def build_model(cfg: NetworkConfig, seed: int | np.random.SeedSequence = 0) -> Model:
    """Initialize a model deterministically from a seed.

    Weights are uniform in [-b, b] with b = sqrt(6 / (fan_in + fan_out)),
    fans counted as neurons*K*Q for convolution stages; biases start at 0.
    The bound keeps initial activations inside tanh's linear region and the
    polynomial inputs inside [-1, 1].
    """
    rng = np.random.default_rng(seed)
    conv_layers = []
    prev = cfg.input_channels
    for spec in cfg.op_layers:
        fan = (prev + spec.neurons) * spec.kernel_size * spec.order
        bound = np.sqrt(6.0 / fan)
        conv_layers.append(nn.GenerativeConvLayer(
            prev, spec.neurons, spec.kernel_size, spec.order,
            weights=rng.uniform(-bound, bound,
                                (prev, spec.neurons, spec.kernel_size, spec.order)),
            biases=np.zeros(spec.neurons),
        ))
        prev = spec.neurons
    dense_layers = []
    for fan_in, fan_out in ((prev, cfg.mlp_hidden), (cfg.mlp_hidden, cfg.n_classes)):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        dense_layers.append(nn.DenseLayer(
            weights=rng.uniform(-bound, bound, (fan_in, fan_out)),
            biases=np.zeros(fan_out),
        ))
    return Model(config=cfg, conv_layers=conv_layers, dense_layers=dense_layers)


@dataclass
class ForwardCache:
    """Intermediate activations saved by forward_batch for the backward pass."""

    conv_inputs: list[np.ndarray]
    pool_switches: list[nn.PoolSwitches]
    conv_activations: list[np.ndarray]
    global_switches: nn.PoolSwitches
    pooled: np.ndarray
    hidden: np.ndarray
    scores: np.ndarray


def forward_batch(m: Model, x: np.ndarray, want_cache: bool = False):
    """Run (B, C, L) inputs through the network; returns (B, n_classes) scores."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (m.config.input_channels, m.config.frame_len):
        raise ValueError(
            f"batch shape {x.shape} != (B, {m.config.input_channels}, {m.config.frame_len})"
        )
    conv_inputs, switches, activations = [], [], []
    h = x
    for layer, spec in zip(m.conv_layers, m.config.op_layers):
        conv_inputs.append(h)
        z = nn.gen_conv_forward(layer, h)
        p, sw = nn.maxpool_forward(z, spec.pool_factor)
        a = nn.tanh_forward(p)
        switches.append(sw)
        activations.append(a)
        h = a
    g, gsw = nn.global_pool(h)
    hidden = nn.tanh_forward(nn.dense_forward(m.dense_layers[0], g))
    scores = nn.tanh_forward(nn.dense_forward(m.dense_layers[1], hidden))
    if not want_cache:
        return scores
    return scores, ForwardCache(conv_inputs, switches, activations, gsw, g, hidden, scores)


@dataclass
class ModelGradients:
    conv: list[nn.GradientBundle]
    dense: list[nn.GradientBundle]


def backward_batch(m: Model, cache: ForwardCache, score_grad: np.ndarray) -> ModelGradients:
    """Backpropagate a gradient on the scores; parameter grads sum over the batch."""
    g2 = nn.tanh_backward(cache.scores, score_grad)
    b2 = nn.dense_backward(m.dense_layers[1], cache.hidden, g2)
    g1 = nn.tanh_backward(cache.hidden, b2.input_grad)
    b1 = nn.dense_backward(m.dense_layers[0], cache.pooled, g1)
    dh = nn.global_pool_backward(cache.global_switches, b1.input_grad)

    conv_bundles: list[nn.GradientBundle] = []
    for i in reversed(range(len(m.conv_layers))):
        dp = nn.tanh_backward(cache.conv_activations[i], dh)
        dz = nn.maxpool_backward(cache.pool_switches[i], dp)
        bundle = nn.gen_conv_backward(m.conv_layers[i], cache.conv_inputs[i], dz,
                                      need_input_grad=i > 0)
        conv_bundles.append(bundle)
        dh = bundle.input_grad
    conv_bundles.reverse()
    return ModelGradients(conv=conv_bundles, dense=[b1, b2])


def _check_frame(m: Model, f: Frame) -> None:
    if not isinstance(f, Frame):
        raise ValueError("expected a Frame")
    if not f.normalized:
        raise ValueError("frame must be normalized before classification")
    expected = (m.config.input_channels, m.config.frame_len)
    if f.samples.shape != expected:
        raise ValueError(f"frame shape {f.samples.shape} != {expected}")


def forward(m: Model, f: Frame) -> np.ndarray:
    """Class scores, each in (-1, 1), for one normalized frame."""
    _check_frame(m, f)
    return forward_batch(m, f.samples[None])[0]


def predict(m: Model, f: Frame) -> int:
    """Argmax class id; ties resolve to the lowest index."""
    return int(np.argmax(forward(m, f)))


def predict_batch(m: Model, x: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Argmax class ids for (B, C, L) inputs, evaluated in memory-bounded chunks."""
    preds = np.empty(x.shape[0], dtype=np.int64)
    for start in range(0, x.shape[0], chunk):
        scores = forward_batch(m, x[start:start + chunk])
        preds[start:start + chunk] = scores.argmax(axis=1)
    return preds


# --- complexity accounting ---------------------------------------------------

@dataclass(frozen=True)
class LayerComplexity:
    name: str
    params: int
    macs: int


@dataclass(frozen=True)
class ComplexityReport:
    """Trainable parameter and multiply-accumulate counts, per layer and total."""

    layers: tuple[LayerComplexity, ...]

    @property
    def total_params(self) -> int:
        return sum(l.params for l in self.layers)

    @property
    def total_macs(self) -> int:
        return sum(l.macs for l in self.layers)

    @property
    def macs_millions(self) -> float:
        return self.total_macs / 1e6


def complexity_report(cfg: NetworkConfig) -> ComplexityReport:
    """Parameter and MAC accounting for a configuration.

    Parameters per convolution stage are N_prev*K*Q*N weights plus N biases.
    MACs per stage are N_prev*M_out*K*Q*N where M_out follows the
    valid-convolution accounting convention (M_in - K + 1, then pooled),
    even though inference computes 'same' convolution; bias adds and the
    cost of raising inputs to powers are not counted. Dense layers count
    fan_in*fan_out.
    """
    layers = []
    prev = cfg.input_channels
    m = cfg.frame_len
    for i, spec in enumerate(cfg.op_layers, start=1):
        m_out = m - spec.kernel_size + 1
        if m_out < 1:
            raise ValueError(f"layer {i}: kernel {spec.kernel_size} exceeds length {m}")
        params = prev * spec.kernel_size * spec.order * spec.neurons + spec.neurons
        macs = prev * m_out * spec.kernel_size * spec.order * spec.neurons
        layers.append(LayerComplexity(f"op{i} ({spec.neurons}n k{spec.kernel_size} "
                                      f"q{spec.order})", params, macs))
        prev = spec.neurons
        m = m_out // spec.pool_factor
    for name, fan_in, fan_out in (("dense1", prev, cfg.mlp_hidden),
                                  ("dense2", cfg.mlp_hidden, cfg.n_classes)):
        layers.append(LayerComplexity(f"{name} ({fan_in}x{fan_out})",
                                      fan_in * fan_out + fan_out, fan_in * fan_out))
    return ComplexityReport(layers=tuple(layers))


def count_params(cfg: NetworkConfig) -> int:
    return complexity_report(cfg).total_params


def count_macs(cfg: NetworkConfig) -> int:
    return complexity_report(cfg).total_macs


# --- serialization -----------------------------------------------------------

def _header_lines(cfg: NetworkConfig, version: str) -> list[str]:
    op = ",".join(f"{s.neurons}:{s.kernel_size}:{s.pool_factor}:{s.order}"
                  for s in cfg.op_layers)
    return [
        MODEL_MAGIC,
        f"version = {version}",
        f"input_channels = {cfg.input_channels}",
        f"frame_len = {cfg.frame_len}",
        f"op_layers = {op}",
        f"mlp_hidden = {cfg.mlp_hidden}",
        f"n_classes = {cfg.n_classes}",
    ]


def _parse_op_layers(text: str) -> tuple[OpLayerSpec, ...]:
    specs = []
    for part in text.split(","):
        fields = part.split(":")
        if len(fields) != 4:
            raise FormatError(f"bad op layer spec {part!r}")
        n, k, p, q = (int(v) for v in fields)
        specs.append(OpLayerSpec(n, k, p, q))
    return tuple(specs)


def _param_arrays(m: Model):
    for layer in m.conv_layers:
        yield layer.weights
        yield layer.biases
    for layer in m.dense_layers:
        yield layer.weights
        yield layer.biases


def save_model(m: Model, path: str | os.PathLike) -> None:
    """Write magic + text header, a blank line, then float64 little-endian weights.

    Weight order: layer by layer; convolution weights are C-ordered over
    (input neuron, output neuron, kernel tap, polynomial order), biases
    follow each layer's weights.
    """
    with open(path, "wb") as fh:
        fh.write(("\n".join(_header_lines(m.config, m.version)) + "\n\n").encode("ascii"))
        for arr in _param_arrays(m):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path: str | os.PathLike) -> Model:
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.find(b"\n\n")
    if sep < 0 or not blob.startswith((MODEL_MAGIC + "\n").encode("ascii")):
        raise FormatError("not a recognized model file")
    header = blob[:sep].decode("ascii").splitlines()[1:]
    fields: dict[str, str] = {}
    for line in header:
        if "=" not in line:
            raise FormatError(f"malformed header line {line!r}")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    try:
        cfg = NetworkConfig(
            input_channels=int(fields["input_channels"]),
            frame_len=int(fields["frame_len"]),
            op_layers=_parse_op_layers(fields["op_layers"]),
            mlp_hidden=int(fields["mlp_hidden"]),
            n_classes=int(fields["n_classes"]),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"invalid model header: {exc}") from None

    values = np.frombuffer(blob[sep + 2:], dtype="<f8")
    shapes = []
    prev = cfg.input_channels
    for spec in cfg.op_layers:
        shapes.append((prev, spec.neurons, spec.kernel_size, spec.order))
        shapes.append((spec.neurons,))
        prev = spec.neurons
    for fan_in, fan_out in ((prev, cfg.mlp_hidden), (cfg.mlp_hidden, cfg.n_classes)):
        shapes.append((fan_in, fan_out))
        shapes.append((fan_out,))
    expected = sum(int(np.prod(s)) for s in shapes)
    if values.size != expected:
        raise FormatError(f"expected {expected} weights, file holds {values.size}")

    arrays = []
    offset = 0
    for s in shapes:
        size = int(np.prod(s))
        arrays.append(values[offset:offset + size].reshape(s).copy())
        offset += size
    conv_layers = []
    prev = cfg.input_channels
    for i, spec in enumerate(cfg.op_layers):
        conv_layers.append(nn.GenerativeConvLayer(
            prev, spec.neurons, spec.kernel_size, spec.order,
            weights=arrays[2 * i], biases=arrays[2 * i + 1]))
        prev = spec.neurons
    base = 2 * len(cfg.op_layers)
    dense_layers = [nn.DenseLayer(arrays[base], arrays[base + 1]),
                    nn.DenseLayer(arrays[base + 2], arrays[base + 3])]
    return Model(config=cfg, conv_layers=conv_layers, dense_layers=dense_layers,
                 version=fields.get("version", "1"))


# --- single-precision inference path -----------------------------------------

class InferenceEngine:
    """Precompiled single-frame forward pass for latency-sensitive classification.

    Weight matrices are reshaped once into the packed-window layout and all
    intermediate buffers are preallocated, held in float32 (training stays
    float64); scores match the reference forward pass to single precision.
    Buffers are reused between calls, so one engine instance must not be
    shared across threads.
    """

    def __init__(self, m: Model, dtype=np.float32):
        self.config = m.config
        self.dtype = dtype
        self._conv = []
        length = m.config.frame_len
        prev = m.config.input_channels
        for layer, spec in zip(m.conv_layers, m.config.op_layers):
            c, n, k, q = layer.weights.shape
            wmat = np.ascontiguousarray(layer.weights.transpose(2, 3, 0, 1),
                                        dtype=dtype).reshape(k * q * c, n)
            stage = {
                "wmat": wmat,
                "bias": layer.biases.astype(dtype),
                "k": k, "q": q, "c": c,
                "pool": spec.pool_factor,
                "m": length,
                # padded time-major input; margins stay zero across calls
                "xpad": np.zeros((length + k - 1, c * q), dtype=dtype),
                "cols": np.empty((length, k * c * q), dtype=dtype),
                "z": np.empty((length, n), dtype=dtype),
            }
            self._conv.append(stage)
            length //= spec.pool_factor
            prev = n
        self._dense = [(l.weights.astype(dtype), l.biases.astype(dtype))
                       for l in m.dense_layers]

    def _frame_scores(self, frame: np.ndarray) -> np.ndarray:
        h = np.ascontiguousarray(frame.T, dtype=self.dtype)  # (M, C)
        for s in self._conv:
            k, q, c, m = s["k"], s["q"], s["c"], s["m"]
            left = k // 2
            body = s["xpad"][left:left + m]
            body[:, :c] = h
            for p in range(1, q):
                np.multiply(body[:, (p - 1) * c:p * c], h, out=body[:, p * c:(p + 1) * c])
            win = np.lib.stride_tricks.sliding_window_view(s["xpad"], k, axis=0)
            np.copyto(s["cols"].reshape(m, k, c * q), win[:m].transpose(0, 2, 1))
            z = s["z"]
            np.matmul(s["cols"], s["wmat"], out=z)
            z += s["bias"]
            out_len = m // s["pool"]
            h = np.tanh(z[:out_len * s["pool"]].reshape(out_len, s["pool"], -1).max(axis=1))
        g = h.max(axis=0)
        w1, b1 = self._dense[0]
        w2, b2 = self._dense[1]
        return np.tanh(np.tanh(g @ w1 + b1) @ w2 + b2)

    def scores(self, x: np.ndarray) -> np.ndarray:
        """(B, C, L) or (C, L) inputs -> class scores."""
        x = np.asarray(x)
        if x.ndim == 2:
            return self._frame_scores(x)
        return np.stack([self._frame_scores(f) for f in x])

    def predict(self, x: np.ndarray) -> int | np.ndarray:
        s = self.scores(x)
        return int(np.argmax(s)) if s.ndim == 1 else s.argmax(axis=1)
