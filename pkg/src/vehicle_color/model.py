"""Two parallel convolutional base networks joined by channel concatenation,
followed by three fully connected layers and a softmax.

Each base network is::

    conv1 -> ReLU -> LRN -> pool
    conv2 -> ReLU -> LRN -> pool
    conv3 -> ReLU
    conv4 -> ReLU
    conv5 -> ReLU -> pool

Both base networks see the same input and never share parameters.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L
from .errors import ShapeError
from .tensor import concat_channels, gaussian_fill

BASE_NETWORKS = ("net1", "net2")
CONV_NAMES = ("conv1", "conv2", "conv3", "conv4", "conv5")
FC_NAMES = ("fc6", "fc7", "fc8")

# Recorded in the spec hash so checkpoints describe how they were computed.
INTERPRETATION = {
    "conv": "cross-correlation",
    "lrn_sum": "neighbour-channel-squares",
    "lrn_constant": 1.0,
    "dropout": "inverted",
}


@dataclass(frozen=True)
class ConvLayer:
    name: str
    out_channels: int
    kernel: int
    stride: int
    pad: int
    lrn: bool
    pool: bool


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture hyperparameters. Defaults give the full 227x227 network."""

    input_size: int = 227
    in_channels: int = 3
    conv1_kernel: int = 11
    conv1_stride: int = 4
    conv_channels: tuple = (48, 128, 192, 192, 128)
    fc_sizes: tuple = (4096, 4096)
    n_classes: int = 8
    pool_size: int = 3
    pool_stride: int = 2
    lrn: L.LrnParams = field(default_factory=L.LrnParams)
    weight_std: float = 0.01
    bias_init: float = 0.1
    layer_std: tuple = ()

    @classmethod
    def tiny(cls, **overrides):
        """Shrunken, topology-identical variant on 35x35 input.

        Spatial chain 35 -> 16 -> 7 -> 7 -> 3 -> 3 -> 3 -> 3 -> 1. The narrow
        layers lose signal at std 0.01, so layers after conv1 use std 0.1,
        which keeps each layer's gain near 1; conv1 keeps 0.01 because it
        sees raw [-255, 255] pixel differences.
        """
        kwargs = dict(
            input_size=35,
            conv1_kernel=5,
            conv1_stride=2,
            conv_channels=(8, 16, 16, 16, 16),
            fc_sizes=(64, 64),
            weight_std=0.1,
            layer_std=(("conv1", 0.01),),
        )
        kwargs.update(overrides)
        return cls(**kwargs)

    def std_for(self, layer_name):
        return dict(self.layer_std).get(layer_name, self.weight_std)

    def conv_layers(self):
        c1, c2, c3, c4, c5 = self.conv_channels
        return (
            ConvLayer("conv1", c1, self.conv1_kernel, self.conv1_stride, 0, True, True),
            ConvLayer("conv2", c2, 3, 1, 1, True, True),
            ConvLayer("conv3", c3, 3, 1, 1, False, False),
            ConvLayer("conv4", c4, 3, 1, 1, False, False),
            ConvLayer("conv5", c5, 3, 1, 1, False, True),
        )

    def spatial_chain(self):
        """Spatial extent after each conv and each pool, in order."""
        size = self.input_size
        chain = []
        for layer in self.conv_layers():
            size = L.window_extent(size, layer.kernel, layer.stride, layer.pad)
            chain.append((layer.name, size))
            if layer.pool:
                size = L.window_extent(size, self.pool_size, self.pool_stride)
                chain.append(("pool" + layer.name[-1], size))
        return chain

    @property
    def final_spatial(self):
        return self.spatial_chain()[-1][1]

    @property
    def concat_length(self):
        return len(BASE_NETWORKS) * self.conv_channels[-1] * self.final_spatial**2

    @property
    def input_shape(self):
        return (self.in_channels, self.input_size, self.input_size)

    def param_shapes(self):
        """Ordered mapping of parameter name to shape; this is the checkpoint order."""
        shapes = {}
        for net in BASE_NETWORKS:
            in_ch = self.in_channels
            for layer in self.conv_layers():
                shapes[f"{net}.{layer.name}.weights"] = (
                    layer.out_channels,
                    in_ch,
                    layer.kernel,
                    layer.kernel,
                )
                shapes[f"{net}.{layer.name}.bias"] = (layer.out_channels,)
                in_ch = layer.out_channels
        widths = (self.concat_length,) + tuple(self.fc_sizes) + (self.n_classes,)
        for name, fan_in, fan_out in zip(FC_NAMES, widths[:-1], widths[1:]):
            shapes[f"{name}.weights"] = (fan_out, fan_in)
            shapes[f"{name}.bias"] = (fan_out,)
        return shapes

    def parameter_count(self):
        return sum(int(np.prod(s)) for s in self.param_shapes().values())

    def neuron_count(self):
        """Units in every conv and fully connected layer (pre-pooling maps)."""
        sizes = dict(self.spatial_chain())
        per_net = sum(
            layer.out_channels * sizes[layer.name] ** 2 for layer in self.conv_layers()
        )
        return len(BASE_NETWORKS) * per_net + sum(self.fc_sizes) + self.n_classes

    def to_dict(self):
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["fc_sizes"] = list(self.fc_sizes)
        d["layer_std"] = [list(p) for p in self.layer_std]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        d["fc_sizes"] = tuple(d["fc_sizes"])
        d["lrn"] = L.LrnParams(**d["lrn"])
        d["layer_std"] = tuple(tuple(p) for p in d.get("layer_std", ()))
        return cls(**d)

    def spec_hash(self):
        payload = json.dumps(
            {"spec": self.to_dict(), "interpretation": INTERPRETATION}, sort_keys=True
        )
        return hashlib.sha256(payload.encode("utf-8")).digest()


@dataclass
class NetworkState:
    spec: NetworkSpec
    params: dict

    def copy(self):
        return NetworkState(self.spec, {k: v.copy() for k, v in self.params.items()})

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def astype(self, dtype):
        return NetworkState(self.spec, {k: v.astype(dtype) for k, v in self.params.items()})


def build(spec=None, seed=0, dtype=np.float32):
    """Gaussian weights (std ``spec.std_for(layer)``), constant biases."""
    spec = spec or NetworkSpec()
    params = {}
    for index, (name, shape) in enumerate(spec.param_shapes().items()):
        if name.endswith(".bias"):
            params[name] = np.full(shape, spec.bias_init, dtype=dtype)
        else:
            layer = name.split(".")[-2]
            params[name] = gaussian_fill(shape, spec.std_for(layer), (seed, index), dtype)
    return NetworkState(spec, params)


def _dropout_seed(seed, layer_name):
    seed = (seed,) if np.isscalar(seed) else tuple(seed)
    return seed + (FC_NAMES.index(layer_name),)


def _forward(state, x, mode, seed, dropout_rate, capture):
    spec = state.spec
    if x.ndim != 4 or x.shape[1:] != spec.input_shape:
        raise ShapeError(f"input must be (B, {spec.input_shape}), got {x.shape}")
    params = state.params
    cache = {}
    towers = []
    for net in BASE_NETWORKS:
        h = x
        for layer in spec.conv_layers():
            key = f"{net}.{layer.name}"
            p = L.ConvParams(params[key + ".weights"], params[key + ".bias"], layer.stride, layer.pad)
            z = L.conv_forward(h, p)
            a = L.relu(z)
            entry = {"input": h, "params": p, "pre": z}
            if layer.lrn:
                entry["lrn_in"] = a
                a = L.lrn_forward(a, spec.lrn)
            if capture is not None:
                capture[key] = a
            if layer.pool:
                entry["pool_in_shape"] = a.shape
                a, entry["argmax"] = L.maxpool_forward(a, spec.pool_size, spec.pool_stride)
                if capture is not None:
                    capture[f"{net}.pool{layer.name[-1]}"] = a
            cache[key] = entry
            h = a
        towers.append(h)

    merged = concat_channels(*towers)
    if capture is not None:
        capture["concat"] = merged
    h = merged.reshape(merged.shape[0], -1)
    cache["concat_shape"] = merged.shape
    for name in FC_NAMES:
        w, b = params[name + ".weights"], params[name + ".bias"]
        z = L.fc_forward(h, w, b)
        entry = {"input": h, "weights": w}
        if name != FC_NAMES[-1]:
            entry["pre"] = z
            z = L.relu(z)
            z = L.dropout(z, dropout_rate, mode, _dropout_seed(seed, name))
        if capture is not None:
            capture[name] = z
        cache[name] = entry
        h = z
    return h, cache


def forward(state, batch, mode="eval", seed=0, dropout_rate=0.5, capture=None):
    """Logits of shape (B, n_classes).

    ``capture``, when a dict, receives named intermediate activations
    (``net1.conv1``, ``net1.pool1``, ..., ``concat``, ``fc6``, ...).
    """
    logits, _ = _forward(state, batch, mode, seed, dropout_rate, capture)
    return logits


def backward(state, batch, labels, seed=0, mode="train", dropout_rate=0.5):
    """Mean cross-entropy loss and its gradient for every parameter.

    Dropout masks are regenerated from ``seed`` so they match the forward pass.
    """
    spec = state.spec
    logits, cache = _forward(state, batch, mode, seed, dropout_rate, None)
    out = L.softmax_loss(logits, labels)
    g = L.softmax_loss_backward(out, labels)
    grads = {}
    for name in reversed(FC_NAMES):
        entry = cache[name]
        if name != FC_NAMES[-1]:
            g = L.dropout_backward(g, dropout_rate, mode, _dropout_seed(seed, name))
            g = L.relu_backward(entry["pre"], g)
        g, grads[name + ".weights"], grads[name + ".bias"] = L.fc_backward(
            entry["input"], entry["weights"], g
        )

    g = g.reshape(cache["concat_shape"])
    split = spec.conv_channels[-1]
    tower_grads = (g[:, :split], g[:, split:])
    for net, g in zip(BASE_NETWORKS, tower_grads):
        for layer in reversed(spec.conv_layers()):
            key = f"{net}.{layer.name}"
            entry = cache[key]
            if layer.pool:
                g = L.maxpool_backward(
                    entry["pool_in_shape"], entry["argmax"], g, spec.pool_size, spec.pool_stride
                )
            if layer.lrn:
                g = L.lrn_backward(entry["lrn_in"], spec.lrn, g)
            g = L.relu_backward(entry["pre"], g)
            g, grads[key + ".weights"], grads[key + ".bias"] = L.conv_backward(
                entry["input"], entry["params"], g, input_grad=layer.name != "conv1"
            )
    ordered = {name: grads[name].astype(state.params[name].dtype, copy=False) for name in state.params}
    return out.loss, ordered
