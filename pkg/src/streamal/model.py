"""Small numpy classifier: conv/pool/dense layer stack, Adam training, evaluation.

Tensors are NHWC and float64. The feature extractor output is the activation
right after the (single) flatten layer.
"""

from __future__ import annotations

import copy
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Dataset, Sample

log = logging.getLogger(__name__)

LAYER_KINDS = ("conv2d", "maxpool2d", "flatten", "dense", "dropout")
ACTIVATIONS = ("relu", "softmax", "none")
CHECKPOINT_MAGIC = b"TACM"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int = 0
    kernel: int = 0
    pool: int = 0
    units: int = 0
    rate: float = 0.0
    activation: str = "none"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind == "conv2d" and (self.filters < 1 or self.kernel < 1):
            raise ValueError("conv2d needs filters >= 1 and kernel >= 1")
        if self.kind == "maxpool2d" and self.pool < 1:
            raise ValueError("maxpool2d needs pool >= 1")
        if self.kind == "dense" and self.units < 1:
            raise ValueError("dense needs units >= 1")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        if self.activation == "softmax" and self.kind != "dense":
            raise ValueError("softmax is only supported on dense layers")

    @classmethod
    def parse(cls, text: str) -> "LayerSpec":
        """Parse ``kind[:arg[:arg]]`` as used in config files.

        ``conv2d:FILTERS:KERNEL[:ACT]``, ``maxpool2d:POOL``, ``flatten``,
        ``dense:UNITS[:ACT]``, ``dropout:RATE``.
        """
        parts = [p.strip() for p in text.strip().split(":")]
        kind, args = parts[0], parts[1:]
        try:
            if kind == "conv2d":
                act = args[2] if len(args) > 2 else "relu"
                return cls("conv2d", filters=int(args[0]), kernel=int(args[1]), activation=act)
            if kind == "maxpool2d":
                return cls("maxpool2d", pool=int(args[0]) if args else 2)
            if kind == "flatten" and not args:
                return cls("flatten")
            if kind == "dense":
                act = args[1] if len(args) > 1 else "relu"
                return cls("dense", units=int(args[0]), activation=act)
            if kind == "dropout":
                return cls("dropout", rate=float(args[0]))
        except (IndexError, ValueError) as exc:
            raise ValueError(f"bad layer description {text!r}: {exc}") from None
        raise ValueError(f"bad layer description {text!r}")


def mlp_layers(classes: int, hidden: int = 32) -> list[LayerSpec]:
    return [LayerSpec("flatten"), LayerSpec("dense", units=hidden, activation="relu"),
            LayerSpec("dense", units=classes, activation="softmax")]


def mnist_cnn_layers(classes: int = 10) -> list[LayerSpec]:
    return [
        LayerSpec("conv2d", filters=8, kernel=3, activation="relu"),
        LayerSpec("maxpool2d", pool=2),
        LayerSpec("conv2d", filters=8, kernel=3, activation="relu"),
        LayerSpec("maxpool2d", pool=2),
        LayerSpec("flatten"),
        LayerSpec("dense", units=8, activation="relu"),
        LayerSpec("dense", units=classes, activation="softmax"),
    ]


def fashion_cnn_layers(classes: int = 10) -> list[LayerSpec]:
    return [
        LayerSpec("conv2d", filters=16, kernel=3, activation="relu"),
        LayerSpec("maxpool2d", pool=2),
        LayerSpec("conv2d", filters=32, kernel=3, activation="relu"),
        LayerSpec("maxpool2d", pool=2),
        LayerSpec("conv2d", filters=64, kernel=3, activation="relu"),
        LayerSpec("flatten"),
        LayerSpec("dense", units=64, activation="relu"),
        LayerSpec("dropout", rate=0.25),
        LayerSpec("dense", units=classes, activation="softmax"),
    ]


def cifar_cnn_layers(classes: int = 10) -> list[LayerSpec]:
    return [
        LayerSpec("conv2d", filters=32, kernel=3, activation="relu"),
        LayerSpec("conv2d", filters=32, kernel=3, activation="relu"),
        LayerSpec("maxpool2d", pool=2),
        LayerSpec("dropout", rate=0.3),
        LayerSpec("conv2d", filters=64, kernel=3, activation="relu"),
        LayerSpec("conv2d", filters=64, kernel=3, activation="relu"),
        LayerSpec("maxpool2d", pool=2),
        LayerSpec("dropout", rate=0.4),
        LayerSpec("flatten"),
        LayerSpec("dense", units=64, activation="relu"),
        LayerSpec("dropout", rate=0.5),
        LayerSpec("dense", units=classes, activation="softmax"),
    ]


ARCHITECTURES = {
    "mlp": mlp_layers,
    "mnist_cnn": mnist_cnn_layers,
    "fashion_cnn": fashion_cnn_layers,
    "cifar_cnn": cifar_cnn_layers,
}


def build_layers(description: str, classes: int) -> list[LayerSpec]:
    """Preset name (``mlp``, ``mlp:64``, ``mnist_cnn`` ...) or comma-separated layers."""
    description = description.strip()
    name, _, arg = description.partition(":")
    if name in ARCHITECTURES and "," not in description:
        if arg:
            if name != "mlp":
                raise ValueError(f"preset {name!r} takes no argument")
            return mlp_layers(classes, int(arg))
        return ARCHITECTURES[name](classes)
    return [LayerSpec.parse(part) for part in description.split(",") if part.strip()]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 10
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _out_shape(spec: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    if spec.kind == "conv2d":
        h, w, _ = shape
        if h < spec.kernel or w < spec.kernel:
            raise ValueError(f"conv kernel {spec.kernel} larger than input {shape}")
        return (h - spec.kernel + 1, w - spec.kernel + 1, spec.filters)
    if spec.kind == "maxpool2d":
        h, w, c = shape
        if h < spec.pool or w < spec.pool:
            raise ValueError(f"pool {spec.pool} larger than input {shape}")
        return (h // spec.pool, w // spec.pool, c)
    if spec.kind == "flatten":
        return (int(np.prod(shape)),)
    if spec.kind == "dense":
        return (spec.units,)
    return shape


class Model:
    """Layer stack with weights.

    ``params[i]`` is ``[weight, bias]`` for conv/dense layers and ``[]``
    otherwise. Conv weights are stored as (kh, kw, c_in, filters).
    """

    def __init__(self, layers: Sequence[LayerSpec], input_shape: Sequence[int], seed: int = 0):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.seed = seed
        if len(self.input_shape) != 3:
            raise ValueError("input shape must be (height, width, channels)")
        flat = [i for i, s in enumerate(self.layers) if s.kind == "flatten"]
        if len(flat) != 1:
            raise ValueError(f"architecture needs exactly one flatten layer, found {len(flat)}")
        last = self.layers[-1]
        if last.kind != "dense" or last.activation != "softmax":
            raise ValueError("last layer must be a dense softmax layer")
        if any(s.activation == "softmax" for s in self.layers[:-1]):
            raise ValueError("softmax is only allowed on the last layer")
        self.feature_cut = flat[0]
        shapes = [self.input_shape]
        for i, spec in enumerate(self.layers):
            if spec.kind in ("conv2d", "maxpool2d") and len(shapes[-1]) != 3:
                raise ValueError(f"layer {i} ({spec.kind}) needs a spatial input")
            if spec.kind == "dense" and len(shapes[-1]) != 1:
                raise ValueError(f"layer {i} (dense) comes before flatten")
            shapes.append(_out_shape(spec, shapes[-1]))
        self.shapes = shapes
        self.params: list[list[np.ndarray]] = []
        self.reset_weights(seed)

    @property
    def class_count(self) -> int:
        return self.layers[-1].units

    @property
    def feature_length(self) -> int:
        return self.shapes[self.feature_cut + 1][0]

    @property
    def parameter_count(self) -> int:
        return sum(p.size for layer in self.params for p in layer)

    def reset_weights(self, seed: int | None = None) -> None:
        """He-uniform for ReLU layers, Glorot-uniform otherwise, zero biases."""
        rng = np.random.default_rng(self.seed if seed is None else seed)
        self.params = []
        for spec, in_shape in zip(self.layers, self.shapes):
            if spec.kind == "conv2d":
                fan_in = spec.kernel * spec.kernel * in_shape[2]
                fan_out = spec.kernel * spec.kernel * spec.filters
                shape = (spec.kernel, spec.kernel, in_shape[2], spec.filters)
                n_out = spec.filters
            elif spec.kind == "dense":
                fan_in, fan_out = in_shape[0], spec.units
                shape = (fan_in, spec.units)
                n_out = spec.units
            else:
                self.params.append([])
                continue
            if spec.activation == "relu":
                limit = math.sqrt(6.0 / fan_in)
            else:
                limit = math.sqrt(6.0 / (fan_in + fan_out))
            self.params.append([rng.uniform(-limit, limit, size=shape), np.zeros(n_out)])

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} does not match model input {self.input_shape}")
        return x

    def forward(self, x: np.ndarray, training: bool = False, rng: np.random.Generator | None = None,
                stop: int | None = None):
        """Run layers [0, stop) on an NHWC batch. Returns (output, caches)."""
        x = self._check_input(x)
        caches = []
        end = len(self.layers) if stop is None else stop
        for spec, params in zip(self.layers[:end], self.params[:end]):
            x, cache = _layer_forward(spec, params, x, training, rng)
            caches.append(cache)
        return x, caches

    def predict_proba_batch(self, x: np.ndarray, chunk: int = 512) -> np.ndarray:
        x = self._check_input(x)
        return np.concatenate([self.forward(x[i:i + chunk])[0] for i in range(0, len(x), chunk)]) \
            if len(x) else np.zeros((0, self.class_count))

    def predict_proba(self, x: Sample | np.ndarray) -> np.ndarray:
        data = x.data if isinstance(x, Sample) else x
        return self.forward(np.asarray(data)[None])[0][0]

    def extract_features(self, x: Sample | np.ndarray) -> np.ndarray:
        data = x.data if isinstance(x, Sample) else x
        return self.forward(np.asarray(data)[None], stop=self.feature_cut + 1)[0][0]

    def proba_and_features(self, x: Sample | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Both outputs from a single forward pass."""
        data = x.data if isinstance(x, Sample) else x
        h = self._check_input(np.asarray(data)[None])
        feature = None
        for i, (spec, params) in enumerate(zip(self.layers, self.params)):
            h, _ = _layer_forward(spec, params, h, False, None)
            if i == self.feature_cut:
                feature = h[0]
        return h[0], feature

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray, rng: np.random.Generator | None = None,
                       training: bool = True):
        """Mean categorical cross-entropy and its gradient for every parameter."""
        probs, caches = self.forward(x, training=training, rng=rng)
        n = len(y)
        picked = probs[np.arange(n), y]
        loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
        grad = probs.copy()
        grad[np.arange(n), y] -= 1.0
        grad /= n
        grads: list[list[np.ndarray]] = [[] for _ in self.layers]
        # softmax + cross-entropy gradient enters below the final activation
        first = True
        for i in range(len(self.layers) - 1, -1, -1):
            grad, grads[i] = _layer_backward(self.layers[i], self.params[i], caches[i], grad,
                                             skip_activation=first)
            first = False
        return loss, grads


def _conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    kh, kw, cin, f = weight.shape
    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))  # N, OH, OW, C, kh, kw
    n, oh, ow = windows.shape[:3]
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, kh * kw * cin)
    out = cols @ weight.reshape(kh * kw * cin, f) + bias
    return out.reshape(n, oh, ow, f), cols


def _conv_backward(x_shape, cols, weight, dout):
    kh, kw, cin, f = weight.shape
    n, oh, ow, _ = dout.shape
    d2 = dout.reshape(-1, f)
    dweight = (cols.T @ d2).reshape(weight.shape)
    dbias = d2.sum(axis=0)
    dcols = (d2 @ weight.reshape(-1, f).T).reshape(n, oh, ow, kh, kw, cin)
    dx = np.zeros(x_shape)
    for i in range(kh):
        for j in range(kw):
            dx[:, i:i + oh, j:j + ow, :] += dcols[:, :, :, i, j, :]
    return dx, dweight, dbias


def _pool_forward(x: np.ndarray, p: int):
    n, h, w, c = x.shape
    oh, ow = h // p, w // p
    xc = x[:, :oh * p, :ow * p, :].reshape(n, oh, p, ow, p, c).transpose(0, 1, 3, 5, 2, 4)
    flat = xc.reshape(n, oh, ow, c, p * p)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _pool_backward(x_shape, arg, p, dout):
    n, h, w, c = x_shape
    oh, ow = dout.shape[1:3]
    dflat = np.zeros((n, oh, ow, c, p * p))
    np.put_along_axis(dflat, arg[..., None], dout[..., None], axis=-1)
    dxc = dflat.reshape(n, oh, ow, c, p, p).transpose(0, 1, 4, 2, 5, 3).reshape(n, oh * p, ow * p, c)
    dx = np.zeros(x_shape)
    dx[:, :oh * p, :ow * p, :] = dxc
    return dx


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "softmax":
        return _softmax(z)
    return z


def _layer_forward(spec: LayerSpec, params, x, training, rng):
    if spec.kind == "conv2d":
        z, cols = _conv_forward(x, params[0], params[1])
        return _activate(z, spec.activation), (x.shape, cols, z)
    if spec.kind == "dense":
        z = x @ params[0] + params[1]
        return _activate(z, spec.activation), (x, z)
    if spec.kind == "maxpool2d":
        out, arg = _pool_forward(x, spec.pool)
        return _activate(out, spec.activation), (x.shape, arg, out)
    if spec.kind == "flatten":
        return x.reshape(len(x), -1), x.shape
    # dropout: inverted scaling, identity at inference
    if not training or spec.rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= spec.rate) / (1.0 - spec.rate)
    return x * mask, mask


def _activation_backward(dout, z, activation, skip):
    if skip or activation in ("none", "softmax"):
        return dout
    return dout * (z > 0)


def _layer_backward(spec: LayerSpec, params, cache, dout, skip_activation=False):
    if spec.kind == "conv2d":
        x_shape, cols, z = cache
        dz = _activation_backward(dout, z, spec.activation, skip_activation)
        dx, dw, db = _conv_backward(x_shape, cols, params[0], dz)
        return dx, [dw, db]
    if spec.kind == "dense":
        x, z = cache
        dz = _activation_backward(dout, z, spec.activation, skip_activation)
        return dz @ params[0].T, [x.T @ dz, dz.sum(axis=0)]
    if spec.kind == "maxpool2d":
        x_shape, arg, out = cache
        dz = _activation_backward(dout, out, spec.activation, skip_activation)
        return _pool_backward(x_shape, arg, spec.pool, dz), []
    if spec.kind == "flatten":
        return dout.reshape(cache), []
    if cache is None:
        return dout, []
    return dout * cache, []


def predict_proba(model: Model, x: Sample) -> np.ndarray:
    return model.predict_proba(x)


def extract_features(model: Model, x: Sample) -> np.ndarray:
    return model.extract_features(x)


def train(model: Model, data: Dataset, cfg: TrainConfig, warm_start: bool = True) -> tuple[Model, float]:
    """Train a copy of ``model`` with Adam; returns (trained copy, last-epoch mean loss).

    With ``warm_start`` off the copy is re-initialized from the model's own
    seed before training. The input model is never modified.
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if data.class_count != model.class_count:
        raise ValueError(f"dataset has {data.class_count} classes, model outputs {model.class_count}")
    trained = model.copy()
    if not warm_start:
        trained.reset_weights()
    x, y = data.arrays()
    x = trained._check_input(x)
    rng = np.random.default_rng(cfg.seed)
    m = [[np.zeros_like(p) for p in layer] for layer in trained.params]
    v = [[np.zeros_like(p) for p in layer] for layer in trained.params]
    step = 0
    epoch_loss = float("nan")
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x))
        losses = []
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = trained.loss_and_grads(x[idx], y[idx], rng=rng)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, step {step}")
            step += 1
            b1c = 1.0 - cfg.beta1 ** step
            b2c = 1.0 - cfg.beta2 ** step
            for li, layer in enumerate(trained.params):
                for pi, p in enumerate(layer):
                    g = grads[li][pi]
                    m[li][pi] = cfg.beta1 * m[li][pi] + (1.0 - cfg.beta1) * g
                    v[li][pi] = cfg.beta2 * v[li][pi] + (1.0 - cfg.beta2) * g * g
                    p -= cfg.learning_rate * (m[li][pi] / b1c) / (np.sqrt(v[li][pi] / b2c) + cfg.epsilon)
            losses.append(loss * len(idx))
        epoch_loss = math.fsum(losses) / len(x)
        if not all(np.all(np.isfinite(p)) for layer in trained.params for p in layer):
            raise TrainingDivergedError(f"non-finite weights after epoch {epoch}")
    log.debug("trained %d epochs on %d samples, loss %.4f", cfg.epochs, len(x), epoch_loss)
    return trained, epoch_loss


def evaluate(model: Model, test: Dataset) -> float:
    """Top-1 accuracy; argmax ties resolve to the lowest class index."""
    if len(test) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    x, y = test.arrays()
    pred = model.predict_proba_batch(x).argmax(axis=1)
    return float(np.mean(pred == y))


def save_checkpoint(model: Model, path: str | Path) -> None:
    """Little-endian: magic, u32 version, u32 layer count, then per layer
    u32 tensor count and for each tensor u32 ndim, u32 dims, float32 data."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(model.layers))]
    for layer in model.params:
        chunks.append(struct.pack("<I", len(layer)))
        for p in layer:
            chunks.append(struct.pack(f"<I{p.ndim}I", p.ndim, *p.shape))
            chunks.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(model: Model, path: str | Path) -> Model:
    """Load weights into a copy of ``model``; shapes must match its architecture."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint (bad magic)")
    pos = 4

    def read(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise ValueError(f"{path}: truncated checkpoint")
        values = struct.unpack_from(fmt, raw, pos)
        pos += size
        return values

    version, n_layers = read("<II")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    if n_layers != len(model.layers):
        raise ValueError(f"{path}: {n_layers} layers, model has {len(model.layers)}")
    out = model.copy()
    for li in range(n_layers):
        (count,) = read("<I")
        if count != len(out.params[li]):
            raise ValueError(f"{path}: layer {li} has {count} tensors, expected {len(out.params[li])}")
        for pi in range(count):
            (ndim,) = read("<I")
            shape = read(f"<{ndim}I")
            expected = out.params[li][pi].shape
            if tuple(shape) != expected:
                raise ValueError(f"{path}: layer {li} tensor {pi} shape {shape} != {expected}")
            n = int(np.prod(shape))
            if pos + 4 * n > len(raw):
                raise ValueError(f"{path}: truncated checkpoint")
            out.params[li][pi] = np.frombuffer(raw, dtype="<f4", count=n, offset=pos).astype(np.float64).reshape(shape)
            pos += 4 * n
    if pos != len(raw):
        raise ValueError(f"{path}: {len(raw) - pos} trailing bytes")
    return out
