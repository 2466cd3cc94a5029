"""Layer-stack neural network with exact reverse-mode gradients.

Everything is float64 and deterministic. Layers operate on batched arrays
(leading N axis) and cache their forward inputs, so a network instance must
be confined to one thread while forward/backward runs; use clone_network()
for read-only copies in worker processes.

Two backward modes exist: STANDARD computes the exact gradient, GUIDED
additionally zeroes, at every ReLU, components whose forward input was not
positive or whose incoming gradient is not positive.

Conventions fixed here so weight files are unambiguous:
    - Conv2d is cross-correlation (no kernel flip), stride 1, zero padding.
    - Conv2d weight shape (out_channels, in_channels, k, k); Dense weight
      shape (in_features, out_features); flat arrays are row-major.
    - MaxPool2d backward routes gradient to the first (row-major within the
      window) maximal element.
"""

from __future__ import annotations

import json
from enum import Enum

import numpy as np

from .errors import ConfigError, InputError, InternalError, NumericError


class BackwardMode(Enum):
    STANDARD = "standard"
    GUIDED = "guided"


class Conv2d:
    """2D convolution, stride 1, symmetric zero padding.

    weight: (out_channels, in_channels, k, k), bias: (out_channels,).
    """

    def __init__(self, weight: np.ndarray, bias: np.ndarray, padding: int = 0):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weight.ndim != 4 or self.bias.shape != (self.weight.shape[0],):
            raise ConfigError("Conv2d parameter shapes inconsistent")
        self.padding = int(padding)
        self.grad_weight = None
        self.grad_bias = None
        self._in_shape = None
        # internal buffers reused across calls (never returned to callers);
        # a fresh allocation per forward is page-fault bound at this size
        self._scratch = {}

    @property
    def kind(self):
        return "Conv2d"

    def out_shape(self, in_shape):
        c, h, w = in_shape
        oc, ic, kh, kw = self.weight.shape
        if c != ic:
            raise ConfigError(f"Conv2d expects {ic} input channels, got {c}")
        ho = h + 2 * self.padding - kh + 1
        wo = w + 2 * self.padding - kw + 1
        if ho < 1 or wo < 1:
            raise ConfigError("Conv2d kernel larger than padded input")
        return (oc, ho, wo)

    def _buffer(self, key, shape):
        buf = self._scratch.get(key)
        if buf is None or buf.shape != shape:
            buf = np.empty(shape, dtype=np.float64)
            self._scratch[key] = buf
        return buf

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        # im2col laid out (features, batch*positions) so each conv is one
        # large GEMM rather than a batch of small ones
        oc, ic, kh, kw = self.weight.shape
        p = self.padding
        n = x.shape[0]
        if p > 0:
            xp = self._buffer("pad", (n, ic, x.shape[2] + 2 * p, x.shape[3] + 2 * p))
            xp.fill(0.0)
            xp[:, :, p : p + x.shape[2], p : p + x.shape[3]] = x
        else:
            xp = x
        ho = xp.shape[2] - kh + 1
        wo = xp.shape[3] - kw + 1
        # cache=False uses separate buffers so score-only forwards can
        # never clobber the cols a pending backward still needs
        cols = self._buffer("cols" if cache else "cols_nc", (ic, kh * kw, n, ho, wo))
        for a in range(kh):
            for b in range(kw):
                cols[:, a * kw + b] = xp[:, :, a : a + ho, b : b + wo].transpose(
                    1, 0, 2, 3
                )
        cols_mat = cols.reshape(ic * kh * kw, n * ho * wo)
        w2 = self.weight.reshape(oc, -1)
        out = np.matmul(
            w2, cols_mat,
            out=self._buffer("gemm" if cache else "gemm_nc", (oc, n * ho * wo)),
        )
        out += self.bias[:, None]
        if cache:
            self._cols_mat = cols_mat
            self._in_shape = x.shape
        return np.ascontiguousarray(out.reshape(oc, n, ho, wo).transpose(1, 0, 2, 3))

    def backward(self, dout: np.ndarray, mode: BackwardMode) -> np.ndarray:
        n, c, h, w = self._in_shape
        oc, ic, kh, kw = self.weight.shape
        p = self.padding
        ho, wo = dout.shape[2], dout.shape[3]
        dflat = np.ascontiguousarray(dout.transpose(1, 0, 2, 3)).reshape(oc, -1)
        self.grad_weight = (dflat @ self._cols_mat.T).reshape(self.weight.shape)
        self.grad_bias = dflat.sum(axis=1)
        w2 = self.weight.reshape(oc, -1)
        dcols = (w2.T @ dflat).reshape(ic, kh * kw, n, ho, wo)
        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=np.float64)
        for a in range(kh):
            for b in range(kw):
                dxp[:, :, a : a + ho, b : b + wo] += dcols[:, a * kw + b].transpose(
                    1, 0, 2, 3
                )
        if p > 0:
            return dxp[:, :, p : h + p, p : w + p]
        return dxp

    def descriptor(self):
        return {
            "kind": "Conv2d",
            "out_channels": int(self.weight.shape[0]),
            "kernel_size": int(self.weight.shape[2]),
            "padding": self.padding,
        }


class ReLU:
    """Elementwise max(0, x). GUIDED backward also drops negative upstream
    gradient components (the only layer where the modes differ)."""

    def __init__(self):
        self._x = None
        self.grad_weight = None
        self.grad_bias = None

    @property
    def kind(self):
        return "ReLU"

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        if cache:
            self._x = x
        return np.maximum(x, 0.0)

    def backward(self, dout: np.ndarray, mode: BackwardMode) -> np.ndarray:
        gate = self._x > 0.0
        if mode is BackwardMode.GUIDED:
            gate = gate & (dout > 0.0)
        return np.where(gate, dout, 0.0)

    def descriptor(self):
        return {"kind": "ReLU"}


class MaxPool2d:
    """Non-overlapping max pooling (stride == kernel_size). Input height and
    width must be divisible by the kernel size."""

    def __init__(self, kernel_size: int = 2):
        self.kernel_size = int(kernel_size)
        self._argmax = None
        self._in_shape = None
        self.grad_weight = None
        self.grad_bias = None
        self._windows = None

    @property
    def kind(self):
        return "MaxPool2d"

    def out_shape(self, in_shape):
        c, h, w = in_shape
        k = self.kernel_size
        if h % k or w % k:
            raise ConfigError(f"MaxPool2d({k}) needs dims divisible by {k}, got {h}x{w}")
        return (c, h // k, w // k)

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        n, c, h, w = x.shape
        k = self.kernel_size
        ho, wo = h // k, w // k
        shape = (n, c, ho, wo, k * k)
        if self._windows is None or self._windows.shape != shape:
            self._windows = np.empty(shape, dtype=np.float64)
        windows = self._windows
        np.copyto(
            windows.reshape(n, c, ho, wo, k, k),
            x.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5),
        )
        if not cache:
            return windows.max(axis=-1)
        # argmax returns the first maximum, which is row-major in the window
        self._argmax = windows.argmax(axis=-1)
        self._in_shape = x.shape
        return np.take_along_axis(windows, self._argmax[..., None], axis=-1)[..., 0]

    def backward(self, dout: np.ndarray, mode: BackwardMode) -> np.ndarray:
        n, c, h, w = self._in_shape
        k = self.kernel_size
        ho, wo = h // k, w // k
        dwin = np.zeros((n, c, ho, wo, k * k), dtype=np.float64)
        np.put_along_axis(dwin, self._argmax[..., None], dout[..., None], axis=-1)
        return (
            dwin.reshape(n, c, ho, wo, k, k)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )

    def descriptor(self):
        return {"kind": "MaxPool2d", "kernel_size": self.kernel_size}


class Flatten:
    def __init__(self):
        self._in_shape = None
        self.grad_weight = None
        self.grad_bias = None

    @property
    def kind(self):
        return "Flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        if cache:
            self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout: np.ndarray, mode: BackwardMode) -> np.ndarray:
        return dout.reshape(self._in_shape)

    def descriptor(self):
        return {"kind": "Flatten"}


class Dense:
    """Fully connected layer: y = x @ weight + bias.

    weight: (in_features, out_features), bias: (out_features,).
    """

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ConfigError("Dense parameter shapes inconsistent")
        self.grad_weight = None
        self.grad_bias = None
        self._x = None

    @property
    def kind(self):
        return "Dense"

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.weight.shape[0]:
            raise ConfigError(
                f"Dense expects flat input of {self.weight.shape[0]}, got {in_shape}"
            )
        return (self.weight.shape[1],)

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        if cache:
            self._x = x
        return x @ self.weight + self.bias

    def backward(self, dout: np.ndarray, mode: BackwardMode) -> np.ndarray:
        self.grad_weight = self._x.T @ dout
        self.grad_bias = dout.sum(axis=0)
        return dout @ self.weight.T

    def descriptor(self):
        return {"kind": "Dense", "out_features": int(self.weight.shape[1])}


_LAYER_KINDS = ("Conv2d", "ReLU", "MaxPool2d", "Flatten", "Dense")


class Network:
    """Ordered layer stack mapping a (C, H, W) image to pre-softmax scores."""

    def __init__(self, layers, input_shape, num_classes, seed=None):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.num_classes = int(num_classes)
        self.seed = seed
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
        if shape != (self.num_classes,):
            raise ConfigError(
                f"network output shape {shape} != ({self.num_classes},); "
                "architecture must end in a Dense layer of num_classes units"
            )

    def forward_batch(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        """Scores for a batch. cache=False skips the activation caches
        (no backward possible) and is cheaper for score-only sweeps."""
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise InputError(
                f"expected batch of shape (N, {self.input_shape}), got {x.shape}"
            )
        out = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            out = layer.forward(out, cache=cache)
        return out

    def forward_tail(self, activations: np.ndarray, start: int,
                     cache: bool = True) -> np.ndarray:
        """Run layers[start:] on precomputed activations of layer
        start-1 (callers that exploit the linearity of an early layer)."""
        out = activations
        for layer in self.layers[start:]:
            out = layer.forward(out, cache=cache)
        return out

    def backward_batch(self, dscores: np.ndarray, mode: BackwardMode) -> np.ndarray:
        dout = dscores
        for layer in reversed(self.layers):
            dout = layer.backward(dout, mode)
        return dout

    def grad_params(self):
        """Per-layer parameter gradients from the last backward pass; None
        for parameter-free layers."""
        grads = []
        for layer in self.layers:
            if layer.grad_weight is None:
                grads.append(None)
            else:
                grads.append({"weight": layer.grad_weight, "bias": layer.grad_bias})
        return grads


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Pre-softmax class scores for a single image; caches activations so a
    backward pass can follow."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != net.input_shape:
        raise InputError(f"input shape {x.shape} != network input {net.input_shape}")
    scores = net.forward_batch(x[None])[0]
    if not np.all(np.isfinite(scores)):
        raise NumericError("non-finite scores in forward pass")
    return scores


def predict(net: Network, x: np.ndarray) -> int:
    return int(np.argmax(forward(net, x)))


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(scores: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy (max-subtracted) and its gradient in the scores."""
    z = scores - scores.max()
    loss = float(np.log(np.exp(z).sum()) - z[label])
    dscores = softmax(scores)
    dscores[label] -= 1.0
    return loss, dscores


def score_gradients(net: Network, x: np.ndarray, class_index: int, mode: BackwardMode):
    """Gradient of one pre-softmax class score w.r.t. the input image."""
    scores = forward(net, x)
    if not 0 <= class_index < net.num_classes:
        raise InputError(f"class index {class_index} out of range")
    seed = np.zeros((1, net.num_classes))
    seed[0, class_index] = 1.0
    grad_x = net.backward_batch(seed, mode)[0]
    return scores, grad_x


def loss_and_grad(net: Network, x: np.ndarray, label: int, mode: BackwardMode):
    """Softmax cross-entropy of forward(net, x) against `label`, plus its
    gradient in the input and in every parameter.

    Returns (loss, grad_x, grad_params). In STANDARD mode grad_x is the
    exact gradient; in GUIDED mode negative components are truncated at
    each ReLU as described in the module docstring.
    """
    if not isinstance(label, (int, np.integer)) or not 0 <= label < net.num_classes:
        raise InputError(f"label {label!r} out of range [0, {net.num_classes})")
    scores = forward(net, x)
    loss, dscores = cross_entropy(scores, int(label))
    grad_x = net.backward_batch(dscores[None], mode)[0]
    if not np.all(np.isfinite(grad_x)):
        raise NumericError("non-finite input gradient")
    return loss, grad_x, net.grad_params()


def sgd_step(net: Network, grad_params, lr: float) -> None:
    """In-place SGD update: p <- p - lr * grad for every parameter."""
    if lr < 0:
        raise InputError("lr must be >= 0")
    if len(grad_params) != len(net.layers):
        raise InternalError("grad_params length != number of layers")
    for layer, grads in zip(net.layers, grad_params):
        if grads is None:
            continue
        if grads["weight"].shape != layer.weight.shape:
            raise InternalError(
                f"gradient shape {grads['weight'].shape} != {layer.weight.shape}"
            )
        layer.weight -= lr * grads["weight"]
        layer.bias -= lr * grads["bias"]


def build_network(architecture, input_shape, num_classes, seed) -> Network:
    """Construct a network from layer descriptors with He-initialized
    parameters drawn from PCG64(seed)."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    layers = []
    shape = tuple(int(d) for d in input_shape)
    for desc in architecture:
        kind = desc.get("kind")
        if kind == "Conv2d":
            ic = shape[0]
            oc, k = int(desc["out_channels"]), int(desc["kernel_size"])
            std = np.sqrt(2.0 / (ic * k * k))
            weight = rng.normal(0.0, std, size=(oc, ic, k, k))
            layers.append(Conv2d(weight, np.zeros(oc), padding=int(desc.get("padding", 0))))
        elif kind == "ReLU":
            layers.append(ReLU())
        elif kind == "MaxPool2d":
            layers.append(MaxPool2d(int(desc.get("kernel_size", 2))))
        elif kind == "Flatten":
            layers.append(Flatten())
        elif kind == "Dense":
            fi = int(np.prod(shape))
            if len(shape) != 1:
                raise ConfigError("Dense layer requires a Flatten before it")
            fo = int(desc["out_features"])
            std = np.sqrt(2.0 / fi)
            layers.append(Dense(rng.normal(0.0, std, size=(fi, fo)), np.zeros(fo)))
        else:
            raise ConfigError(f"unknown layer kind {kind!r}; one of {_LAYER_KINDS}")
        shape = layers[-1].out_shape(shape)
    return Network(layers, input_shape, num_classes, seed=seed)


def clone_network(net: Network) -> Network:
    """Independent copy sharing no arrays; safe to use in another thread."""
    layers = []
    for layer in net.layers:
        if isinstance(layer, Conv2d):
            layers.append(Conv2d(layer.weight.copy(), layer.bias.copy(), layer.padding))
        elif isinstance(layer, Dense):
            layers.append(Dense(layer.weight.copy(), layer.bias.copy()))
        elif isinstance(layer, MaxPool2d):
            layers.append(MaxPool2d(layer.kernel_size))
        elif isinstance(layer, ReLU):
            layers.append(ReLU())
        else:
            layers.append(Flatten())
    return Network(layers, net.input_shape, net.num_classes, seed=net.seed)


def save_network(net: Network, path) -> None:
    """Weight file: one JSON document with architecture, flat row-major
    parameter arrays at full float precision, input shape, classes, seed."""
    weights = []
    for layer in net.layers:
        if hasattr(layer, "weight"):
            weights.append(
                {
                    "weight": layer.weight.ravel().tolist(),
                    "bias": layer.bias.ravel().tolist(),
                }
            )
        else:
            weights.append(None)
    doc = {
        "architecture": [layer.descriptor() for layer in net.layers],
        "weights": weights,
        "input_shape": list(net.input_shape),
        "num_classes": net.num_classes,
        "seed": net.seed,
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_network(path) -> Network:
    with open(path) as f:
        doc = json.load(f)
    net = build_network(
        doc["architecture"], doc["input_shape"], doc["num_classes"], doc.get("seed", 0)
    )
    for layer, entry in zip(net.layers, doc["weights"]):
        if entry is None:
            if hasattr(layer, "weight"):
                raise ConfigError("weight file missing parameters for a layer")
            continue
        layer.weight = np.array(entry["weight"], dtype=np.float64).reshape(
            layer.weight.shape
        )
        layer.bias = np.array(entry["bias"], dtype=np.float64).reshape(layer.bias.shape)
    return net
