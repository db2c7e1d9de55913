from __future__ import annotations

import numpy as np

from . import functional as F


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape).astype(dtype)


class Layer:
    """Base layer: ``params`` are trained, ``buffers`` are saved but not trained."""

    kind = "layer"
    stochastic = False

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def spec(self) -> dict:
        return {"kind": self.kind}


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out, rng=None, dtype=np.float32):
        super().__init__()
        if n_in < 1 or n_out < 1:
            raise ValueError("dense widths must be >= 1")
        rng = rng or np.random.default_rng(0)
        self.params["W"] = glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)

    def forward(self, x, training=False, rng=None):
        self._cache = x
        return F.dense_forward(x, self.params["W"], self.params["b"])

    def backward(self, dy):
        dx, self.grads["W"], self.grads["b"] = F.dense_backward(dy, self._cache, self.params["W"])
        return dx

    def spec(self):
        n_in, n_out = self.params["W"].shape
        return {"kind": self.kind, "n_in": n_in, "n_out": n_out}


class BRNN(Layer):
    """One bidirectional simple-recurrent (tanh) layer; output width ``2 * units``."""

    kind = "brnn"

    def __init__(self, n_in, units, rng=None, dtype=np.float32):
        super().__init__()
        if n_in < 1 or units < 1:
            raise ValueError("brnn widths must be >= 1")
        rng = rng or np.random.default_rng(0)
        self.params["Wx"] = glorot_uniform(rng, (2, n_in, units), n_in, units, dtype)
        self.params["Wh"] = glorot_uniform(rng, (2, units, units), units, units, dtype)
        self.params["b"] = np.zeros((2, units), dtype=dtype)

    def forward(self, x, training=False, rng=None):
        y, self._cache = F.brnn_layer_forward(x, self.params["Wx"], self.params["Wh"],
                                              self.params["b"])
        return y

    def backward(self, dy):
        dx, self.grads["Wx"], self.grads["Wh"], self.grads["b"] = F.brnn_layer_backward(dy, self._cache)
        return dx

    def spec(self):
        _, n_in, units = self.params["Wx"].shape
        return {"kind": self.kind, "n_in": n_in, "units": units}


class BatchNorm(Layer):
    kind = "batch_norm"

    def __init__(self, n_features, momentum=0.99, eps=1e-5, dtype=np.float32,
                 init_statistics=True):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(n_features, dtype=dtype)
        self.params["beta"] = np.zeros(n_features, dtype=dtype)
        if init_statistics:
            self.buffers["moving_mean"] = np.zeros(n_features, dtype=dtype)
            self.buffers["moving_var"] = np.ones(n_features, dtype=dtype)

    def forward(self, x, training=False, rng=None):
        if training and "moving_mean" not in self.buffers:
            n = self.params["gamma"].shape[0]
            self.buffers["moving_mean"] = x.reshape(-1, n).mean(axis=0).astype(x.dtype)
            self.buffers["moving_var"] = x.reshape(-1, n).var(axis=0).astype(x.dtype)
        y, self._cache = F.batch_norm_forward(
            x, self.params["gamma"], self.params["beta"], "train" if training else "infer",
            self.buffers.get("moving_mean"), self.buffers.get("moving_var"),
            self.momentum, self.eps,
        )
        return y

    def backward(self, dy):
        dx, self.grads["gamma"], self.grads["beta"] = F.batch_norm_backward(dy, self._cache)
        return dx

    def spec(self):
        return {"kind": self.kind, "n_features": int(self.params["gamma"].shape[0]),
                "momentum": self.momentum, "eps": self.eps}


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, p):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout p must be in [0, 1), got {p}")
        self.p = p

    @property
    def stochastic(self):
        return self.p > 0

    def forward(self, x, training=False, rng=None):
        y, self._cache = F.dropout_forward(x, self.p, "train" if training else "infer", rng)
        return y

    def backward(self, dy):
        return F.dropout_backward(dy, self._cache)

    def spec(self):
        return {"kind": self.kind, "p": self.p}


class AvgPoolTime(Layer):
    kind = "avg_pool_time"

    def __init__(self, k):
        super().__init__()
        if k < 1:
            raise ValueError("pool size must be >= 1")
        self.k = k

    def forward(self, x, training=False, rng=None):
        self._cache = x.shape[1]
        return F.avg_pool_time(x, self.k)

    def backward(self, dy):
        return F.avg_pool_time_backward(dy, self.k, self._cache)

    def spec(self):
        return {"kind": self.kind, "k": self.k}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, training=False, rng=None):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._cache)


class Activation(Layer):
    kind = "activation"

    def __init__(self, name):
        super().__init__()
        if name not in ("tanh", "elu", "softmax"):
            raise ValueError(f"unknown activation {name!r}")
        self.name = name

    def forward(self, x, training=False, rng=None):
        y = F.activation_forward(x, self.name)
        self._cache = (x, y)
        return y

    def backward(self, dy):
        x, y = self._cache
        return F.activation_backward(dy, x, y, self.name)

    def spec(self):
        return {"kind": self.kind, "name": self.name}


class Sequential:
    """Named layer stack. Parameter names are ``"<layer>.<param>"``."""

    def __init__(self, layers: list[tuple[str, Layer]]):
        names = [n for n, _ in layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        self.layers = list(layers)

    def __iter__(self):
        return iter(self.layers)

    def __getitem__(self, name) -> Layer:
        for n, layer in self.layers:
            if n == name:
                return layer
        raise KeyError(name)

    def forward(self, x, training=False, rng=None):
        for _, layer in self.layers:
            x = layer.forward(x, training, rng)
        return x

    def backward(self, dy):
        for _, layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{n}.{k}": v for n, layer in self.layers for k, v in layer.params.items()}

    def named_grads(self) -> dict[str, np.ndarray]:
        return {f"{n}.{k}": v for n, layer in self.layers for k, v in layer.grads.items()}

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {f"{n}.{k}": v for n, layer in self.layers for k, v in layer.buffers.items()}

    def n_params(self) -> int:
        return sum(layer.n_params() for _, layer in self.layers)

    def parameters(self) -> "ParameterSet":
        return ParameterSet(self.named_params())


class ParameterSet:
    """Ordered named parameters with one momentum buffer per parameter.

    The arrays are shared with the owning layers, so updates are visible to
    the network immediately.
    """

    def __init__(self, values: dict[str, np.ndarray]):
        self.values = dict(values)
        self.velocity = {k: np.zeros_like(v) for k, v in self.values.items()}

    def __getitem__(self, name):
        return self.values[name]

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def items(self):
        return self.values.items()

    def count(self) -> int:
        return int(sum(v.size for v in self.values.values()))


def sgd_step(params: ParameterSet, grads: dict[str, np.ndarray], lr=0.001, momentum=0.9,
             clip=5.0) -> ParameterSet:
    """Momentum SGD with element-wise gradient clipping to ``[-clip, clip]``:
    ``v <- momentum * v + clip(g)``, ``p <- p - lr * v`` (in place)."""
    for name, p in params.values.items():
        g = grads[name]
        if g.shape != p.shape:
            raise F.ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        v = params.velocity[name]
        v *= momentum
        v += np.clip(g, -clip, clip)
        p -= p.dtype.type(lr) * v
    return params
