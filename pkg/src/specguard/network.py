"""Feedforward classifier engine: the network is a feature map (all layers
up to the readout) composed with a final linear readout, so that logits =
readout(features(x)) and class probabilities are softmax(logits). Softmax is
never needed for prediction since it preserves the ordering of logits.

Layers operate on batches; single-sample entry points wrap them. Images are
(channels, h, w) and a dense layer flattens row-major whenever it receives
higher-rank input, which is also how a convolutional feature map meets the
readout.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .numerics import Rng

# sup of |d gelu / dx| (attained at x = sqrt(2)); relu/tanh/identity have sup 1
GELU_MAX_DERIV = 1.1289041451851553


@dataclass(frozen=True)
class ActivationSpec:
    name: str
    fn: callable
    grad: callable
    max_abs_deriv: float


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(x):
    # derivative at the kink defined as 0
    return (x > 0).astype(np.float64)


def _tanh_grad(x):
    t = np.tanh(x)
    return 1.0 - t * t


ACTIVATIONS = {
    "gelu": ActivationSpec("gelu", _kernels.gelu, _kernels.gelu_grad, GELU_MAX_DERIV),
    "relu": ActivationSpec("relu", _relu, _relu_grad, 1.0),
    "tanh": ActivationSpec("tanh", np.tanh, _tanh_grad, 1.0),
    "identity": ActivationSpec("identity", lambda x: x,
                               lambda x: np.ones_like(x), 1.0),
}


class DenseLayer:
    kind = "dense"

    def __init__(self, W: np.ndarray, b: np.ndarray | None = None):
        self.W = np.asarray(W, dtype=np.float64)
        self.b = None if b is None else np.asarray(b, dtype=np.float64)
        if self.W.ndim != 2:
            raise ValueError(f"dense weight must be 2D, got {self.W.shape}")
        if self.b is not None and self.b.shape != (self.W.shape[0],):
            raise ValueError(f"bias shape {self.b.shape} does not match {self.W.shape}")

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    def forward(self, X: np.ndarray) -> np.ndarray:
        if X.ndim > 2:
            X = X.reshape(X.shape[0], -1)
        Z = X @ self.W.T
        if self.b is not None:
            Z = Z + self.b
        return Z


class ConvLayer:
    """Periodic 2D convolution with fixed input spatial size (the operator,
    and hence its spectrum, depends on it)."""

    kind = "conv2d-periodic"

    def __init__(self, kernel: np.ndarray, h: int, w: int, stride: int = 1,
                 b: np.ndarray | None = None):
        self.kernel = np.asarray(kernel, dtype=np.float64)
        if self.kernel.ndim != 4:
            raise ValueError(f"conv kernel must be 4D, got {self.kernel.shape}")
        self.h, self.w, self.stride = h, w, stride
        self.b = None if b is None else np.asarray(b, dtype=np.float64)
        if self.b is not None and self.b.shape != (self.kernel.shape[0],):
            raise ValueError(f"bias shape {self.b.shape} does not match kernel")

    @property
    def h_out(self) -> int:
        return (self.h - 1) // self.stride + 1

    @property
    def w_out(self) -> int:
        return (self.w - 1) // self.stride + 1

    def forward(self, X: np.ndarray) -> np.ndarray:
        out = np.stack([_kernels.conv2d_periodic(np.ascontiguousarray(img),
                                                 self.kernel, self.stride)
                        for img in X])
        if self.b is not None:
            out = out + self.b[None, :, None, None]
        return out


class ActivationLayer:
    kind = "activation"

    def __init__(self, name: str):
        if name not in ACTIVATIONS:
            raise ValueError(f"unknown activation {name!r}")
        self.name = name
        self.spec = ACTIVATIONS[name]

    def forward(self, X: np.ndarray) -> np.ndarray:
        return self.spec.fn(X)


@dataclass
class Net:
    """Classifier as feature layers plus a unique dense readout."""

    feature_layers: list
    readout: DenseLayer
    input_shape: tuple

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def feature_dim(self) -> int:
        return self.readout.W.shape[1]

    @property
    def classes(self) -> int:
        return self.readout.W.shape[0]

    @property
    def layers(self) -> list:
        return list(self.feature_layers) + [self.readout]

    def weighted_layers(self) -> list[tuple[int, object]]:
        """(index, layer) for layers carrying weights, readout last."""
        out = [(i, l) for i, l in enumerate(self.layers)
               if l.kind in ("dense", "conv2d-periodic")]
        return out

    def max_activation_deriv(self) -> float:
        """Product over activation layers of sup|phi'| (certified Lipschitz
        factor of the nonlinearities along the feature map)."""
        prod = 1.0
        for l in self.feature_layers:
            if l.kind == "activation":
                prod *= l.spec.max_abs_deriv
        return prod


@dataclass
class ForwardCache:
    """Per-layer inputs (and the final logits) from one forward pass."""

    inputs: list
    logits: np.ndarray


def _check_input(net: Net, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1:] != net.input_shape:
        raise ValueError(f"input shape {X.shape[1:]} does not match net "
                         f"input {net.input_shape}")
    return X


def forward_batch(net: Net, X: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    X = _check_input(net, X)
    inputs = []
    a = X
    for layer in net.layers:
        inputs.append(a)
        a = layer.forward(a)
    return a, ForwardCache(inputs=inputs, logits=a)


def forward(net: Net, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    logits, cache = forward_batch(net, np.asarray(x)[None])
    return logits[0], cache


def feature_map_batch(net: Net, X: np.ndarray) -> np.ndarray:
    X = _check_input(net, X)
    a = X
    for layer in net.feature_layers:
        a = layer.forward(a)
    if a.ndim > 2:
        a = a.reshape(a.shape[0], -1)
    return a


def feature_map(net: Net, x: np.ndarray) -> np.ndarray:
    return feature_map_batch(net, np.asarray(x)[None])[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def predict_batch(net: Net, X: np.ndarray) -> np.ndarray:
    logits, _ = forward_batch(net, X)
    return np.argmax(logits, axis=1)


def predict(net: Net, x: np.ndarray) -> int:
    """Predicted class: argmax of the logits, ties broken by lowest index."""
    return int(predict_batch(net, np.asarray(x)[None])[0])


def parameters(net: Net) -> list[np.ndarray]:
    """Live parameter arrays in a fixed order (per layer: weights, then bias)."""
    out = []
    for _, layer in net.weighted_layers():
        out.append(layer.kernel if layer.kind == "conv2d-periodic" else layer.W)
        if layer.b is not None:
            out.append(layer.b)
    return out


def backward(net: Net, cache: ForwardCache, dlogits: np.ndarray) -> list[np.ndarray]:
    """Reverse-mode gradients of sum(dlogits * logits) w.r.t. parameters().

    ``dlogits`` carries any loss scaling (e.g. (softmax - onehot) / m for
    mean cross-entropy).
    """
    layers = net.layers
    if len(cache.inputs) != len(layers):
        raise ValueError("cache does not match this net")
    grads: dict[int, list] = {}
    delta = np.asarray(dlogits, dtype=np.float64)
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        a_in = cache.inputs[i]
        if layer.kind == "dense":
            a_flat = a_in.reshape(a_in.shape[0], -1) if a_in.ndim > 2 else a_in
            gW = delta.T @ a_flat
            entry = [gW]
            if layer.b is not None:
                entry.append(delta.sum(axis=0))
            grads[i] = entry
            delta = delta @ layer.W
            if a_in.ndim > 2:
                delta = delta.reshape(a_in.shape)
        elif layer.kind == "conv2d-periodic":
            gK = np.zeros_like(layer.kernel)
            kh, kw = layer.kernel.shape[2:]
            new_delta = np.empty_like(a_in)
            for s in range(a_in.shape[0]):
                d = np.ascontiguousarray(delta[s])
                gK += _kernels.conv_kernel_corr(d, np.ascontiguousarray(a_in[s]),
                                                kh, kw, layer.stride)
                new_delta[s] = _kernels.conv2d_periodic_adjoint(
                    d, layer.kernel, layer.stride, layer.h, layer.w)
            entry = [gK]
            if layer.b is not None:
                entry.append(delta.sum(axis=(0, 2, 3)))
            grads[i] = entry
            delta = new_delta
        else:  # activation
            delta = delta * layer.spec.grad(a_in)
    out = []
    for i, layer in net.weighted_layers():
        out.extend(grads[i])
    return out


def input_jacobian_feature(net: Net, x: np.ndarray) -> np.ndarray:
    """Jacobian of the feature map at x, shape (feature_dim, input_dim).

    Computed by pushing the standard basis through the linearized feature
    layers (diagonal activation derivatives times layer operators), so
    convolution layers act in operator form and their matrix is never built.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != net.input_shape:
        raise ValueError(f"input shape {x.shape} does not match net "
                         f"input {net.input_shape}")
    n = net.input_dim
    T = np.eye(n).reshape((n,) + net.input_shape)
    a = x[None]
    for layer in net.feature_layers:
        if layer.kind == "dense":
            T2 = T.reshape(n, -1)
            T = T2 @ layer.W.T
        elif layer.kind == "conv2d-periodic":
            T = np.stack([_kernels.conv2d_periodic(np.ascontiguousarray(t),
                                                   layer.kernel, layer.stride)
                          for t in T])
        else:
            # a[0] is the layer input, i.e. the preactivation
            T = T * layer.spec.grad(a[0])[None]
        a = layer.forward(a)
    return T.reshape(n, -1).T.copy()


def conv2d_periodic(X: np.ndarray, kernel: np.ndarray, stride: int = 1) -> np.ndarray:
    """Periodic convolution of a single (c_in, h, w) image."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"image must be (c, h, w), got {X.shape}")
    return _kernels.conv2d_periodic(X, np.ascontiguousarray(kernel, dtype=np.float64),
                                    stride)


def make_mlp(dims: list[int], activation: str = "gelu", rng: Rng | None = None,
             init_std: float | None = None, bias: bool = True) -> Net:
    """Fully-connected net: dims = [input, hidden..., classes]. Every hidden
    layer is followed by the activation; the last map is the linear readout.

    Weights (and biases) are gaussian; ``init_std=None`` scales each layer
    by 1/sqrt(fan_in).
    """
    if len(dims) < 2:
        raise ValueError("need at least input and output dims")
    if rng is None:
        rng = Rng(0)
    layers = []
    for i in range(len(dims) - 2):
        std = init_std if init_std is not None else 1.0 / np.sqrt(dims[i])
        W = rng.gaussian((dims[i + 1], dims[i]), 0.0, std)
        b = rng.gaussian((dims[i + 1],), 0.0, std) if bias else None
        layers.append(DenseLayer(W, b))
        layers.append(ActivationLayer(activation))
    std = init_std if init_std is not None else 1.0 / np.sqrt(dims[-2])
    W = rng.gaussian((dims[-1], dims[-2]), 0.0, std)
    b = rng.gaussian((dims[-1],), 0.0, std) if bias else None
    readout = DenseLayer(W, b)
    return Net(feature_layers=layers, readout=readout, input_shape=(dims[0],))


# ---------------------------------------------------------------------------
# checkpoint format: versioned JSON with base64-encoded little-endian float64
# buffers, so round trips are bit-exact and files are self-describing.

_FORMAT = "specguard-net"
_VERSION = 1


def _enc(arr: np.ndarray) -> dict:
    a = np.asarray(arr, dtype=np.float64)
    return {"shape": list(a.shape),
            "data": base64.b64encode(a.astype("<f8").tobytes()).decode("ascii")}


def _dec(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(obj["shape"])


# exposed so training state (velocities, rng snapshots) can ride along in
# checkpoints with the same bit-exact encoding
encode_array = _enc
decode_array = _dec


def net_to_dict(net: Net) -> dict:
    layers = []
    for layer in net.layers:
        if layer.kind == "dense":
            d = {"kind": "dense", "W": _enc(layer.W)}
            if layer.b is not None:
                d["b"] = _enc(layer.b)
        elif layer.kind == "conv2d-periodic":
            d = {"kind": "conv2d-periodic", "kernel": _enc(layer.kernel),
                 "h": layer.h, "w": layer.w, "stride": layer.stride}
            if layer.b is not None:
                d["b"] = _enc(layer.b)
        else:
            d = {"kind": "activation", "name": layer.name}
        layers.append(d)
    return {"format": _FORMAT, "version": _VERSION,
            "input_shape": list(net.input_shape), "layers": layers}


def net_from_dict(doc: dict) -> Net:
    if doc.get("format") != _FORMAT:
        raise ValueError(f"not a {_FORMAT} document")
    if doc.get("version") != _VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    layers = []
    for d in doc["layers"]:
        if d["kind"] == "dense":
            layers.append(DenseLayer(_dec(d["W"]),
                                     _dec(d["b"]) if "b" in d else None))
        elif d["kind"] == "conv2d-periodic":
            layers.append(ConvLayer(_dec(d["kernel"]), d["h"], d["w"], d["stride"],
                                    _dec(d["b"]) if "b" in d else None))
        elif d["kind"] == "activation":
            layers.append(ActivationLayer(d["name"]))
        else:
            raise ValueError(f"unknown layer kind {d['kind']!r}")
    if not layers or layers[-1].kind != "dense":
        raise ValueError("checkpoint must end with a dense readout")
    return Net(feature_layers=layers[:-1], readout=layers[-1],
               input_shape=tuple(doc["input_shape"]))


def save_checkpoint(net: Net, path, extra: dict | None = None) -> None:
    doc = net_to_dict(net)
    if extra:
        doc["extra"] = extra
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path) -> tuple[Net, dict]:
    with open(path) as f:
        doc = json.load(f)
    return net_from_dict(doc), doc.get("extra", {})
