"""Small feedforward controller networks.

The concrete forward pass, the box-abstract forward pass, and manual
reverse-mode gradients all run over one shared layer stack so the three
views cannot drift apart. Inference-mode batch norm is folded into a
per-feature affine map, which makes the abstract pass exact for it and
makes point-box propagation bitwise identical to the concrete pass.
"""

from __future__ import annotations

import json
from typing import Sequence

import numpy as np

from .boxdomain import BoxState, Interval, affine, monotone_elementwise

__all__ = [
    "Dense",
    "BatchNorm",
    "LeakyReLU",
    "Tanh",
    "Network",
    "actor_network",
    "critic_network",
    "network_from_architecture",
    "save_checkpoint",
    "load_checkpoint",
]


class Dense:
    """Fully connected layer y = W x + b."""

    kind = "fc"

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("dense layer shape mismatch")

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "Dense":
        bound = 1.0 / np.sqrt(in_dim)
        w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        b = rng.uniform(-bound, bound, size=out_dim)
        return cls(w, b)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def state_arrays(self):
        return self.params()

    def load_arrays(self, arrays):
        self.weight = arrays["weight"]
        self.bias = arrays["bias"]

    def forward(self, x, training=False, update_running=False):
        return x @ self.weight.T + self.bias, x

    def backward(self, dy, cache):
        x = cache
        grads = {"weight": dy.T @ x, "bias": dy.sum(axis=0)}
        return dy @ self.weight, grads

    def forward_box(self, box: BoxState) -> BoxState:
        return affine(box, self.weight, self.bias)

    def arch_token(self) -> str:
        return f"fc:{self.in_dim}:{self.out_dim}"


class BatchNorm:
    """Batch normalization over the feature axis.

    Training mode normalizes with biased batch statistics and folds new
    statistics into the running averages with the configured momentum.
    Inference mode is the frozen affine map
    y = scale * x + shift with scale = gamma / sqrt(running_var + eps).
    """

    kind = "bn"

    def __init__(self, dim: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.eps = float(eps)
        self.momentum = float(momentum)

    @property
    def dim(self) -> int:
        return self.gamma.size

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def state_arrays(self):
        return {
            "gamma": self.gamma,
            "beta": self.beta,
            "running_mean": self.running_mean,
            "running_var": self.running_var,
            "eps": np.float64(self.eps),
            "momentum": np.float64(self.momentum),
        }

    def load_arrays(self, arrays):
        self.gamma = arrays["gamma"]
        self.beta = arrays["beta"]
        self.running_mean = arrays["running_mean"]
        self.running_var = arrays["running_var"]
        self.eps = float(arrays["eps"])
        self.momentum = float(arrays["momentum"])

    def _inference_scale_shift(self):
        scale = self.gamma / np.sqrt(self.running_var + self.eps)
        shift = self.beta - self.running_mean * scale
        return scale, shift

    def forward(self, x, training=False, update_running=False):
        if not training:
            scale, shift = self._inference_scale_shift()
            return x * scale + shift, ("inf", x, scale)
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        istd = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * istd
        if update_running:
            m = self.momentum
            self.running_mean = (1.0 - m) * self.running_mean + m * mu
            self.running_var = (1.0 - m) * self.running_var + m * var
        return xhat * self.gamma + self.beta, ("train", xhat, istd)

    def backward(self, dy, cache):
        mode = cache[0]
        if mode == "inf":
            _, x, scale = cache
            xhat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
            grads = {"gamma": (dy * xhat).sum(axis=0), "beta": dy.sum(axis=0)}
            return dy * scale, grads
        _, xhat, istd = cache
        grads = {"gamma": (dy * xhat).sum(axis=0), "beta": dy.sum(axis=0)}
        dxhat = dy * self.gamma
        dx = istd * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
        return dx, grads

    def forward_box(self, box: BoxState) -> BoxState:
        # inference-mode BN is a diagonal affine map; exact on boxes
        scale, shift = self._inference_scale_shift()
        return BoxState(center=box.center * scale + shift,
                        deviation=box.deviation * np.abs(scale))

    def arch_token(self) -> str:
        return f"bn:{self.dim}"


class LeakyReLU:
    """Leaky rectifier with a positive negative-side slope (so it stays
    strictly increasing and the box rule is exact)."""

    kind = "lrelu"

    def __init__(self, slope: float = 0.2):
        if not 0.0 < slope < 1.0:
            raise ValueError("leaky slope must be in (0, 1)")
        self.slope = float(slope)

    def params(self):
        return {}

    def state_arrays(self):
        return {}

    def load_arrays(self, arrays):
        pass

    def forward(self, x, training=False, update_running=False):
        return np.where(x > 0, x, self.slope * x), x

    def backward(self, dy, cache):
        x = cache
        return dy * np.where(x > 0, 1.0, self.slope), {}

    def forward_box(self, box: BoxState) -> BoxState:
        s = self.slope
        return monotone_elementwise(box, lambda v: np.where(v > 0, v, s * v))

    def arch_token(self) -> str:
        return f"lrelu:{self.slope!r}"


class Tanh:
    kind = "tanh"

    def params(self):
        return {}

    def state_arrays(self):
        return {}

    def load_arrays(self, arrays):
        pass

    def forward(self, x, training=False, update_running=False):
        y = np.tanh(x)
        return y, y

    def backward(self, dy, cache):
        y = cache
        return dy * (1.0 - y * y), {}

    def forward_box(self, box: BoxState) -> BoxState:
        return monotone_elementwise(box, np.tanh)

    def arch_token(self) -> str:
        return "tanh"


def _chain_dims(layers) -> tuple[int, int]:
    """Validate that layer dimensions chain and return (input, output) dims."""
    dim = None
    first = None
    for layer in layers:
        if isinstance(layer, Dense):
            if dim is not None and layer.in_dim != dim:
                raise ValueError(f"layer chain breaks: expected {dim}, got fc input {layer.in_dim}")
            if first is None:
                first = layer.in_dim
            dim = layer.out_dim
        elif isinstance(layer, BatchNorm):
            if dim is not None and layer.dim != dim:
                raise ValueError(f"layer chain breaks: expected {dim}, got bn dim {layer.dim}")
            if first is None:
                first = layer.dim
            dim = layer.dim
    if first is None or dim is None:
        raise ValueError("network needs at least one parametric layer")
    return first, dim


class Network:
    """Layer stack with concrete, abstract, and gradient passes."""

    def __init__(self, layers: Sequence):
        self.layers = list(layers)
        self.input_dim, self.output_dim = _chain_dims(self.layers)

    # ---- concrete ----

    def forward(self, state: np.ndarray) -> float:
        """Single-state inference pass; returns the scalar output."""
        x = np.asarray(state, dtype=np.float64).reshape(-1)
        if x.size != self.input_dim:
            raise ValueError(f"state has dimension {x.size}, expected {self.input_dim}")
        y, _ = self.forward_batch(x[None, :], training=False)
        if self.output_dim != 1:
            raise ValueError("scalar forward requires an output dimension of 1")
        return float(y[0, 0])

    def forward_batch(self, x: np.ndarray, training: bool, update_running: bool = False):
        """Batched pass; returns (output, caches) where caches feed backward()."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"batch shape {x.shape} incompatible with input dim {self.input_dim}")
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, training=training, update_running=update_running)
            caches.append(cache)
        return x, caches

    def backward(self, dy: np.ndarray, caches) -> tuple[np.ndarray, dict]:
        """Chain upstream output gradients back to parameters and the input.

        Returns (d_input, grads) with grads keyed "layerindex.param".
        """
        grads = {}
        for i in reversed(range(len(self.layers))):
            dy, layer_grads = self.layers[i].backward(dy, caches[i])
            for name, g in layer_grads.items():
                grads[f"{i}.{name}"] = g
        return dy, grads

    def gradients(self, states: np.ndarray, upstream, training: bool = True,
                  update_running: bool | None = None) -> dict:
        """Parameter gradients of the output, chain-ruled with `upstream`.

        Accepts a single state vector or a batch; batch-norm layers use
        batch statistics in training mode (running stats updated unless
        `update_running` is overridden).
        """
        x = np.asarray(states, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if update_running is None:
            update_running = training
        y, caches = self.forward_batch(x, training=training, update_running=update_running)
        dy = np.broadcast_to(np.asarray(upstream, dtype=np.float64).reshape(-1, 1),
                             y.shape).copy() if np.ndim(upstream) <= 1 else np.asarray(upstream)
        _, grads = self.backward(dy, caches)
        return grads

    # ---- abstract ----

    def forward_box(self, box: BoxState) -> BoxState:
        if box.m != self.input_dim:
            raise ValueError(f"box has dimension {box.m}, expected {self.input_dim}")
        for layer in self.layers:
            box = layer.forward_box(box)
        return box

    def forward_abstract(self, box: BoxState) -> Interval:
        """Sound output interval over every concrete state in the box."""
        out = self.forward_box(box)
        if out.m != 1:
            raise ValueError("abstract interval output requires an output dimension of 1")
        return out.interval(0)

    # ---- parameters / persistence ----

    def parameters(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out[f"{i}.{name}"] = arr
        return out

    def set_parameters(self, values: dict) -> None:
        for i, layer in enumerate(self.layers):
            for name in layer.params():
                layer.__dict__[name] = np.array(values[f"{i}.{name}"], dtype=np.float64)

    def state_arrays(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.state_arrays().items():
                out[f"{i}.{name}"] = np.asarray(arr)
        return out

    def architecture(self) -> str:
        return "|".join(layer.arch_token() for layer in self.layers)

    def copy(self) -> "Network":
        twin = network_from_architecture(self.architecture())
        twin._load_state({k: v.copy() for k, v in self.state_arrays().items()})
        return twin

    def _load_state(self, arrays: dict) -> None:
        for i, layer in enumerate(self.layers):
            expected = layer.state_arrays()
            picked = {}
            for name in expected:
                key = f"{i}.{name}"
                if key not in arrays:
                    raise ValueError(f"checkpoint is missing array {key}")
                arr = np.asarray(arrays[key], dtype=np.float64)
                if np.shape(expected[name]) != arr.shape:
                    raise ValueError(f"checkpoint array {key} has shape {arr.shape}, "
                                     f"expected {np.shape(expected[name])}")
                picked[name] = arr
            layer.load_arrays(picked)


def actor_network(input_dim: int, hidden: int = 256, depth: int = 2,
                  slope: float = 0.2, bn_momentum: float = 0.1,
                  rng: np.random.Generator | None = None) -> Network:
    """Controller: (FC -> BN -> LeakyReLU) x depth -> FC-1 -> tanh."""
    rng = rng or np.random.default_rng()
    layers = []
    dim = input_dim
    for _ in range(depth):
        layers.append(Dense.init(dim, hidden, rng))
        layers.append(BatchNorm(hidden, momentum=bn_momentum))
        layers.append(LeakyReLU(slope))
        dim = hidden
    layers.append(Dense.init(dim, 1, rng))
    layers.append(Tanh())
    return Network(layers)


def critic_network(state_dim: int, action_dim: int = 1, hidden: int = 256,
                   depth: int = 2, slope: float = 0.2,
                   rng: np.random.Generator | None = None) -> Network:
    """Q function over concatenated (state, action): (FC -> LeakyReLU) x depth -> FC-1."""
    rng = rng or np.random.default_rng()
    layers = []
    dim = state_dim + action_dim
    for _ in range(depth):
        layers.append(Dense.init(dim, hidden, rng))
        layers.append(LeakyReLU(slope))
        dim = hidden
    layers.append(Dense.init(dim, 1, rng))
    return Network(layers)


def network_from_architecture(arch: str) -> Network:
    """Rebuild an (unparameterized) network from its architecture string."""
    layers = []
    for token in arch.split("|"):
        parts = token.split(":")
        kind = parts[0]
        if kind == "fc":
            in_dim, out_dim = int(parts[1]), int(parts[2])
            layers.append(Dense(np.zeros((out_dim, in_dim)), np.zeros(out_dim)))
        elif kind == "bn":
            layers.append(BatchNorm(int(parts[1])))
        elif kind == "lrelu":
            layers.append(LeakyReLU(float(parts[1])))
        elif kind == "tanh":
            layers.append(Tanh())
        else:
            raise ValueError(f"unknown layer token {token!r}")
    return Network(layers)


def save_checkpoint(path, nets: dict[str, Network], step: int = 0,
                    config: dict | None = None) -> None:
    """Write named networks plus metadata to a single .npz file.

    Arrays round-trip bit-exactly; metadata is a JSON header carrying the
    architecture strings, the training step counter, and the resolved
    configuration.
    """
    payload = {}
    meta = {"format": 1, "step": int(step), "config": config or {},
            "architectures": {}}
    for net_name, net in nets.items():
        meta["architectures"][net_name] = net.architecture()
        for key, arr in net.state_arrays().items():
            payload[f"{net_name}/{key}"] = arr
    payload["_meta"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **payload)


def load_checkpoint(path) -> tuple[dict[str, Network], int, dict]:
    """Load networks saved by save_checkpoint; returns (nets, step, config)."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["_meta"]).decode("utf-8"))
        nets = {}
        for net_name, arch in meta["architectures"].items():
            net = network_from_architecture(arch)
            prefix = f"{net_name}/"
            arrays = {k[len(prefix):]: data[k] for k in data.files if k.startswith(prefix)}
            net._load_state(arrays)
            nets[net_name] = net
    return nets, int(meta["step"]), meta["config"]
