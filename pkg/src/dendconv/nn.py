"""A small layer zoo, softmax cross-entropy and momentum SGD.

Models are built from :class:`LayerSpec` lists. Conv and DDC layers share the
same initialization stream, so swapping ``kind="conv"`` for ``kind="ddc"``
under one seed yields identical weights (the DDC ``alpha`` is never drawn
from the RNG).
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import BuildError, DimensionError, InputError, StateError
from .metrics import accuracy
from .operators import (
    ConvParams,
    DdcParams,
    Scope,
    conv_backward,
    conv_forward,
    ddc_backward,
    ddc_forward,
)
from .tensor import output_size

LAYER_KINDS = ("conv", "ddc", "relu", "maxpool2", "flatten", "linear")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_channels: int = 0  # conv/ddc
    k: int = 3
    stride: int = 1
    padding: int = 0
    out_features: int = 0  # linear
    alpha: float = 0.1
    alpha_learnable: bool = False
    scope: str = Scope.PER_CHANNEL.value
    normalize_s: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise BuildError(f"unknown layer kind {self.kind!r}; expected one of {LAYER_KINDS}")

    def as_dict(self) -> dict:
        return asdict(self)


def swap_conv_kind(specs, kind: str, **ddc_flags) -> list[LayerSpec]:
    """Replace every conv/ddc layer by ``kind``, leaving all other layers unchanged."""
    out = []
    for s in specs:
        if s.kind in ("conv", "ddc"):
            s = replace(s, kind=kind, **ddc_flags)
        out.append(s)
    return out


class Layer:
    kind = ""

    def __init__(self, spec: LayerSpec, in_shape: tuple):
        self.spec = spec
        self.in_shape = in_shape
        self.cache = None

    @property
    def out_shape(self) -> tuple:
        return self.in_shape

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x, training):
        raise NotImplementedError

    def backward(self, grad, input_grad=True):
        """Return ``(grad_input, {param_name: grad})``."""
        raise NotImplementedError

    def _take_cache(self):
        if self.cache is None:
            raise StateError(f"{self.kind}: backward called without a training-mode forward")
        cache, self.cache = self.cache, None
        return cache


def _kaiming_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, shape)


class ConvLayer(Layer):
    kind = "conv"

    def __init__(self, spec, in_shape, rng):
        super().__init__(spec, in_shape)
        c, h, w = in_shape
        k = spec.k
        if spec.out_channels < 1:
            raise BuildError("out_channels must be >= 1")
        if k > h + 2 * spec.padding or k > w + 2 * spec.padding:
            raise BuildError(f"kernel {k} does not fit input {in_shape} with padding {spec.padding}")
        fan_in = c * k * k
        self.conv = ConvParams(
            _kaiming_uniform(rng, (spec.out_channels, c, k, k), fan_in),
            np.zeros(spec.out_channels),
            spec.stride,
            spec.padding,
        )

    @property
    def out_shape(self):
        _, h, w = self.in_shape
        s = self.spec
        return (s.out_channels, output_size(h, s.k, s.stride, s.padding), output_size(w, s.k, s.stride, s.padding))

    def params(self):
        return {"weight": self.conv.weights, "bias": self.conv.bias}

    def forward(self, x, training):
        out, cache = conv_forward(x, self.conv, training, name=self.kind)
        self.cache = cache
        return out

    def backward(self, grad, input_grad=True):
        gx, gw, gb = conv_backward(grad, self._take_cache(), self.conv, input_grad)
        return gx, {"weight": gw, "bias": gb}


class DdcLayer(ConvLayer):
    kind = "ddc"

    def __init__(self, spec, in_shape, rng):
        super().__init__(spec, in_shape, rng)
        self.ddc = DdcParams(self.conv, spec.alpha, spec.alpha_learnable, Scope(spec.scope), spec.normalize_s)
        # alpha lives in a 0-d array so sgd_step can update it in place
        self._alpha = np.array(spec.alpha)

    def params(self):
        p = super().params()
        if self.ddc.alpha_learnable:
            p["alpha"] = self._alpha
        return p

    def forward(self, x, training):
        self.ddc.alpha = float(self._alpha)
        out, cache = ddc_forward(x, self.ddc, training, name=self.kind)
        self.cache = cache
        return out

    def backward(self, grad, input_grad=True):
        gx, gw, gb, ga = ddc_backward(grad, self._take_cache(), self.ddc, input_grad)
        grads = {"weight": gw, "bias": gb}
        if ga is not None:
            grads["alpha"] = np.array(ga)
        return gx, grads


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training):
        mask = x > 0
        if training:
            self.cache = mask
        return np.where(mask, x, 0.0)

    def backward(self, grad, input_grad=True):
        return np.where(self._take_cache(), grad, 0.0), {}


class MaxPool2(Layer):
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped."""

    kind = "maxpool2"

    def __init__(self, spec, in_shape):
        super().__init__(spec, in_shape)
        if in_shape[1] < 2 or in_shape[2] < 2:
            raise BuildError(f"maxpool2 needs spatial size >= 2, got {in_shape}")

    @property
    def out_shape(self):
        c, h, w = self.in_shape
        return (c, h // 2, w // 2)

    def forward(self, x, training):
        n, c, h, w = x.shape
        ho, wo = h // 2, w // 2
        blocks = x[:, :, : 2 * ho, : 2 * wo].reshape(n, c, ho, 2, wo, 2)
        out = blocks.max(axis=(3, 5))
        if training:
            # first maximum wins on ties, so gradient goes to exactly one input
            flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
            self.cache = (x.shape, flat.argmax(axis=-1))
        return out

    def backward(self, grad, input_grad=True):
        shape, idx = self._take_cache()
        n, c, h, w = shape
        ho, wo = h // 2, w // 2
        flat = np.zeros((n, c, ho, wo, 4))
        np.put_along_axis(flat, idx[..., None], grad[..., None], axis=-1)
        blocks = flat.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
        gx = np.zeros(shape)
        gx[:, :, : 2 * ho, : 2 * wo] = blocks
        return gx, {}


class Flatten(Layer):
    kind = "flatten"

    @property
    def out_shape(self):
        return (int(np.prod(self.in_shape)),)

    def forward(self, x, training):
        if training:
            self.cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad, input_grad=True):
        return grad.reshape(self._take_cache()), {}


class Linear(Layer):
    kind = "linear"

    def __init__(self, spec, in_shape, rng):
        super().__init__(spec, in_shape)
        if len(in_shape) != 1:
            raise BuildError(f"linear expects a flat input, got shape {in_shape} (add a flatten layer)")
        if spec.out_features < 1:
            raise BuildError("out_features must be >= 1")
        fan_in = in_shape[0]
        self.weight = _kaiming_uniform(rng, (spec.out_features, fan_in), fan_in)
        self.bias = np.zeros(spec.out_features)

    @property
    def out_shape(self):
        return (self.spec.out_features,)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, training):
        if training:
            self.cache = x
        return x @ self.weight.T + self.bias

    def backward(self, grad, input_grad=True):
        x = self._take_cache()
        return grad @ self.weight, {"weight": grad.T @ x, "bias": grad.sum(axis=0)}


@dataclass
class Model:
    layers: list
    input_shape: tuple  # (C, H, W)
    specs: list
    seed: int
    velocity: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_shape[0]

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{name}", p) for i, layer in enumerate(self.layers) for name, p in layer.params().items()]

    def param_count(self) -> int:
        return sum(p.size for _, p in self.named_params())

    def weight_hash(self, include_alpha: bool = False) -> str:
        """SHA-256 over parameter bytes; used to assert twin models start identical."""
        h = hashlib.sha256()
        for name, p in self.named_params():
            if name.endswith(".alpha") and not include_alpha:
                continue
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()


def _make_layer(spec: LayerSpec, in_shape, rng):
    if spec.kind in ("conv", "ddc"):
        if len(in_shape) != 3:
            raise BuildError(f"{spec.kind} expects (C, H, W) input, got {in_shape}")
        return (ConvLayer if spec.kind == "conv" else DdcLayer)(spec, in_shape, rng)
    if spec.kind == "linear":
        return Linear(spec, in_shape, rng)
    if len(in_shape) != 3 and spec.kind != "relu":
        raise BuildError(f"{spec.kind} expects (C, H, W) input, got {in_shape}")
    return {"relu": ReLU, "maxpool2": MaxPool2, "flatten": Flatten}[spec.kind](spec, in_shape)


def build_model(specs, seed: int, input_shape=(3, 32, 32)) -> Model:
    """Instantiate layers in order with Kaiming-uniform weights drawn from ``seed``."""
    specs = list(specs)
    if not specs:
        raise BuildError("empty layer spec list")
    rng = np.random.default_rng(seed)
    shape = tuple(input_shape)
    layers = []
    for i, spec in enumerate(specs):
        try:
            layer = _make_layer(spec, shape, rng)
        except BuildError as e:
            raise BuildError(f"layer {i} ({spec.kind}): {e}") from None
        layers.append(layer)
        shape = layer.out_shape
    if len(shape) != 1:
        raise BuildError(f"final layer must produce (num_classes,), got {shape}")
    return Model(layers, tuple(input_shape), specs, seed)


def forward(model: Model, batch, training: bool = False) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.shape[1:] != model.input_shape:
        raise DimensionError(f"layer 0: batch shape {x.shape[1:]} != model input {model.input_shape}")
    for i, layer in enumerate(model.layers):
        try:
            x = layer.forward(x, training)
        except DimensionError as e:
            raise DimensionError(f"layer {i} ({layer.kind}): {e}") from None
    return x


def backward(model: Model, grad_logits) -> dict[str, np.ndarray]:
    """Backpropagate through the cached forward pass; returns grads keyed like ``named_params``."""
    grads = {}
    g = np.asarray(grad_logits, dtype=np.float64)
    for i in reversed(range(len(model.layers))):
        # the batch itself needs no gradient
        g, layer_grads = model.layers[i].backward(g, input_grad=i > 0)
        for name, value in layer_grads.items():
            grads[f"{i}.{name}"] = value
    return grads


def softmax_xent(logits, labels):
    """Mean cross-entropy and its gradient ``(softmax - onehot) / N``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise InputError(f"labels shape {labels.shape} != ({n},)")
    if np.any(labels < 0) or np.any(labels >= c):
        raise InputError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_z[:, None]
    loss = -float(np.mean(log_p[np.arange(n), labels]))
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def sgd_step(model: Model, grads: dict, lr: float, momentum: float = 0.9):
    """In-place update ``v = momentum*v + g``; ``p -= lr*v``."""
    named = model.named_params()
    if set(grads) != {name for name, _ in named}:
        raise StateError(f"gradient keys {sorted(grads)} do not match parameters")
    for name, p in named:
        g = grads[name]
        if g.shape != p.shape:
            raise StateError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        v = model.velocity.get(name)
        v = g.copy() if v is None else momentum * v + g
        model.velocity[name] = v
        p -= lr * v


@dataclass(frozen=True)
class EpochStats:
    loss: float
    accuracy: float


def train_epoch(model: Model, images, labels, batch_size: int, lr: float, momentum: float, rng) -> EpochStats:
    images = np.asarray(images)
    labels = np.asarray(labels)
    n = len(labels)
    if n == 0:
        raise InputError("empty dataset")
    order = rng.permutation(n)
    total_loss = 0.0
    preds = np.empty(n, dtype=np.int64)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        logits = forward(model, images[idx], training=True)
        loss, grad = softmax_xent(logits, labels[idx])
        grads = backward(model, grad)
        sgd_step(model, grads, lr, momentum)
        total_loss += loss * len(idx)
        preds[idx] = logits.argmax(axis=1)
    return EpochStats(total_loss / n, accuracy(preds, labels))


def predict(model: Model, images, batch_size: int = 256) -> np.ndarray:
    images = np.asarray(images)
    out = [forward(model, images[i : i + batch_size]).argmax(axis=1) for i in range(0, len(images), batch_size)]
    return np.concatenate(out)


def evaluate(model: Model, images, labels, batch_size: int = 256) -> float:
    """Classification accuracy in percent."""
    return accuracy(predict(model, images, batch_size), labels)


# Checkpoint layout (little-endian):
#   b"DDC1" | u32 seed | u32 C,H,W | u32 layer count
#   per layer: u8 kind tag | u32 len + JSON hyperparams | u32 tensor count
#              per tensor: u8 ndim | u32 dims... | f64 data
_MAGIC = b"DDC1"


def _param_arrays(layer) -> list[np.ndarray]:
    if isinstance(layer, DdcLayer):
        return [layer.conv.weights, layer.conv.bias, layer._alpha]
    return list(layer.params().values())


def save_checkpoint(model: Model, path) -> None:
    buf = bytearray(_MAGIC)
    buf += struct.pack("<I", model.seed)
    buf += struct.pack("<3I", *model.input_shape)
    buf += struct.pack("<I", len(model.layers))
    for layer in model.layers:
        buf += struct.pack("<B", LAYER_KINDS.index(layer.kind))
        meta = json.dumps(layer.spec.as_dict(), sort_keys=True).encode()
        buf += struct.pack("<I", len(meta)) + meta
        arrays = _param_arrays(layer)
        buf += struct.pack("<I", len(arrays))
        for a in arrays:
            buf += struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
            buf += np.ascontiguousarray(a, dtype="<f8").tobytes()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(buf))
    tmp.replace(path)


def load_checkpoint(path) -> Model:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise InputError(f"{path}: not a DDC1 checkpoint")
    pos = 4

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        return vals

    (seed,) = take("<I")
    input_shape = take("<3I")
    (count,) = take("<I")
    specs, tensors = [], []
    for _ in range(count):
        (tag,) = take("<B")
        (mlen,) = take("<I")
        spec = LayerSpec(**json.loads(data[pos : pos + mlen]))
        pos += mlen
        if LAYER_KINDS.index(spec.kind) != tag:
            raise InputError(f"{path}: kind tag {tag} disagrees with hyperparams {spec.kind!r}")
        (ntensors,) = take("<I")
        arrays = []
        for _ in range(ntensors):
            (ndim,) = take("<B")
            shape = take(f"<{ndim}I")
            size = int(np.prod(shape))
            arrays.append(np.frombuffer(data, "<f8", size, pos).reshape(shape).astype(np.float64))
            pos += 8 * size
        specs.append(spec)
        tensors.append(arrays)
    model = build_model(specs, seed, input_shape)
    for layer, arrays in zip(model.layers, tensors):
        for dst, src in zip(_param_arrays(layer), arrays):
            dst[...] = src
        if isinstance(layer, DdcLayer):
            layer.ddc.alpha = float(layer._alpha)
    return model
