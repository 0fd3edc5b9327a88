"""Small dense networks with exact backpropagation.

Parameters of a network live in one contiguous float64 buffer. Trainable
tensors (kernels, biases, batch-norm gains and shifts) come first, followed by
the batch-norm running statistics, so the optimiser touches a single slice and
federated averaging can operate on the whole buffer at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from platoon_frl import kernels

ACTIVATIONS = ("relu", "tanh", "linear")


class ShapeError(ValueError):
    pass


class InvalidBatchError(ValueError):
    pass


class ContractError(RuntimeError):
    """A cache or gradient does not belong to the parameters it is used with."""


@dataclass(frozen=True)
class Layer:
    fan_in: int
    fan_out: int
    activation: str = "relu"
    batch_norm: bool = False

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.fan_in < 1 or self.fan_out < 1:
            raise ShapeError("layer arities must be positive")


@dataclass(frozen=True)
class NetworkSpec:
    """Input branches, each a chain of layers, concatenated into a trunk.

    A branch with no layers passes its input through unchanged. The last trunk
    layer is the output layer; its output is multiplied by ``output_scale``.
    """

    inputs: tuple[int, ...]
    branches: tuple[tuple[Layer, ...], ...]
    trunk: tuple[Layer, ...]
    output_scale: float = 1.0
    bn_momentum: float = 0.99
    bn_eps: float = 1e-3

    def __post_init__(self):
        if len(self.inputs) != len(self.branches):
            raise ShapeError("one branch per input is required")
        if not self.trunk:
            raise ShapeError("the trunk needs at least the output layer")
        width = 0
        for arity, branch in zip(self.inputs, self.branches):
            prev = arity
            for layer in branch:
                if layer.fan_in != prev:
                    raise ShapeError(f"branch layer expects {layer.fan_in} inputs, gets {prev}")
                prev = layer.fan_out
            width += prev
        for layer in self.trunk:
            if layer.fan_in != width:
                raise ShapeError(f"trunk layer expects {layer.fan_in} inputs, gets {width}")
            width = layer.fan_out

    @property
    def layers(self) -> tuple[Layer, ...]:
        out: list[Layer] = []
        for branch in self.branches:
            out.extend(branch)
        out.extend(self.trunk)
        return tuple(out)

    @property
    def output_dim(self) -> int:
        return self.trunk[-1].fan_out

    def layout(self) -> list[tuple[str, tuple[int, ...], bool]]:
        """``(name, shape, trainable)`` for every tensor, in buffer order."""
        trainable, stats = [], []
        for k, layer in enumerate(self.layers):
            trainable.append((f"{k}.kernel", (layer.fan_in, layer.fan_out), True))
            trainable.append((f"{k}.bias", (layer.fan_out,), True))
            if layer.batch_norm:
                trainable.append((f"{k}.gamma", (layer.fan_out,), True))
                trainable.append((f"{k}.beta", (layer.fan_out,), True))
                stats.append((f"{k}.moving_mean", (layer.fan_out,), False))
                stats.append((f"{k}.moving_var", (layer.fan_out,), False))
        return trainable + stats


def actor_spec(state_dim: int = 4, hidden: Sequence[int] = (256, 128), u_max: float = 2.5,
               bn_momentum: float = 0.99, bn_eps: float = 1e-3) -> NetworkSpec:
    trunk = []
    prev = state_dim
    for width in hidden:
        trunk.append(Layer(prev, width, "relu", True))
        prev = width
    trunk.append(Layer(prev, 1, "tanh", False))
    return NetworkSpec((state_dim,), ((),), tuple(trunk), u_max, bn_momentum, bn_eps)


def critic_spec(state_dim: int = 4, action_dim: int = 1, state_units: int = 48,
                action_units: int = 256, hidden: int = 128,
                bn_momentum: float = 0.99, bn_eps: float = 1e-3) -> NetworkSpec:
    return NetworkSpec(
        (state_dim, action_dim),
        ((Layer(state_dim, state_units, "relu", True),),
         (Layer(action_dim, action_units, "relu", True),)),
        (Layer(state_units + action_units, hidden, "relu", True),
         Layer(hidden, 1, "linear", False)),
        1.0,
        bn_momentum,
        bn_eps,
    )


def _views(spec: NetworkSpec, data: np.ndarray, trainable_only: bool) -> dict[str, np.ndarray]:
    views = {}
    offset = 0
    for name, shape, trainable in spec.layout():
        if trainable_only and not trainable:
            break
        size = math.prod(shape)
        views[name] = data[offset:offset + size].reshape(shape)
        offset += size
    return views


def _sizes(spec: NetworkSpec) -> tuple[int, int]:
    n_train = n_total = 0
    for _, shape, trainable in spec.layout():
        n_total += math.prod(shape)
        if trainable:
            n_train += math.prod(shape)
    return n_train, n_total


class NetworkParams:
    """All tensors of one network, backed by the flat buffer ``data``."""

    def __init__(self, spec: NetworkSpec, data: np.ndarray | None = None):
        self.spec = spec
        self.n_trainable, n_total = _sizes(spec)
        if data is None:
            data = np.zeros(n_total)
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.shape != (n_total,):
            raise ShapeError(f"flat vector has shape {data.shape}, expected ({n_total},)")
        self.data = data
        self.tensors = _views(spec, data, trainable_only=False)
        self.version = 0

    @classmethod
    def from_flat(cls, spec: NetworkSpec, flat) -> "NetworkParams":
        return cls(spec, np.array(flat, dtype=np.float64, copy=True))

    @property
    def trainable(self) -> np.ndarray:
        return self.data[: self.n_trainable]

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.spec, self.data.copy())

    def assign(self, flat) -> None:
        """Overwrite every tensor from a flat vector."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != self.data.shape:
            raise ShapeError(f"flat vector has shape {flat.shape}, expected {self.data.shape}")
        self.data[:] = flat
        self.version += 1

    def named(self) -> list[tuple[str, np.ndarray]]:
        return [(name, self.tensors[name]) for name, _, _ in self.spec.layout()]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


class Gradients:
    """Gradients of the trainable tensors, flat-backed like :class:`NetworkParams`."""

    def __init__(self, spec: NetworkSpec, data: np.ndarray | None = None):
        self.spec = spec
        n_train, _ = _sizes(spec)
        if data is None:
            data = np.zeros(n_train)
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.shape != (n_train,):
            raise ShapeError(f"gradient vector has shape {data.shape}, expected ({n_train},)")
        self.data = data
        self.tensors = _views(spec, data, trainable_only=True)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def named(self) -> list[tuple[str, np.ndarray]]:
        return list(self.tensors.items())


def init_network(spec: NetworkSpec, rng: np.random.Generator, final_bound: float = 3e-3) -> NetworkParams:
    """Uniform fan-in initialisation; the output layer uses ``±final_bound``."""
    params = NetworkParams(spec)
    layers = spec.layers
    last = len(layers) - 1
    for k, layer in enumerate(layers):
        bound = final_bound if k == last else 1.0 / math.sqrt(layer.fan_in)
        params[f"{k}.kernel"][:] = rng.uniform(-bound, bound, size=(layer.fan_in, layer.fan_out))
        params[f"{k}.bias"][:] = rng.uniform(-bound, bound, size=layer.fan_out)
        if layer.batch_norm:
            params[f"{k}.gamma"][:] = 1.0
            params[f"{k}.beta"][:] = 0.0
            params[f"{k}.moving_mean"][:] = 0.0
            params[f"{k}.moving_var"][:] = 1.0
    return params


@dataclass
class _LayerCache:
    x: np.ndarray
    out: np.ndarray  # post-activation, before output scaling
    xhat: np.ndarray | None = None
    inv_std: np.ndarray | None = None


@dataclass
class ForwardCache:
    params_id: int
    version: int
    mode: str
    layers: list[_LayerCache] = field(default_factory=list)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(dout: np.ndarray, out: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return dout * (out > 0.0)
    if activation == "tanh":
        return dout * (1.0 - out * out)
    return dout


def _layer_forward(params: NetworkParams, k: int, layer: Layer, x: np.ndarray, mode: str,
                   update_stats: bool) -> tuple[np.ndarray, _LayerCache]:
    spec = params.spec
    z = x @ params[f"{k}.kernel"]
    z += params[f"{k}.bias"]
    if not layer.batch_norm:
        out = _activate(z, layer.activation)
        return out, _LayerCache(x, out)
    gamma, beta = params[f"{k}.gamma"], params[f"{k}.beta"]
    if mode == "train":
        relu = layer.activation == "relu"
        out, xhat, inv_std, mean, var = kernels.bn_act_forward(z, gamma, beta, spec.bn_eps, relu)
        if not relu:
            out = _activate(out, layer.activation)
        if update_stats:
            mom = spec.bn_momentum
            rm, rv = params[f"{k}.moving_mean"], params[f"{k}.moving_var"]
            rm *= mom
            rm += (1.0 - mom) * mean
            rv *= mom
            rv += (1.0 - mom) * var
        return out, _LayerCache(x, out, xhat, inv_std)
    relu = layer.activation == "relu"
    out, xhat, inv_std = kernels.bn_act_eval(z, gamma, beta, params[f"{k}.moving_mean"],
                                             params[f"{k}.moving_var"], spec.bn_eps, relu)
    if not relu:
        out = _activate(out, layer.activation)
    return out, _LayerCache(x, out, xhat, inv_std)


def forward(params: NetworkParams, inputs, mode: str = "eval", update_stats: bool = True):
    """Run the network on a batch.

    ``inputs`` is one 2-D array per input branch (a bare array is accepted for
    single-input networks). In ``train`` mode batch-norm layers use batch
    statistics and, unless ``update_stats`` is false, fold them into the
    running statistics. Returns ``(outputs, cache)``.
    """
    spec = params.spec
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if isinstance(inputs, np.ndarray):
        inputs = [inputs]
    if len(inputs) != len(spec.inputs):
        raise ShapeError(f"network takes {len(spec.inputs)} inputs, got {len(inputs)}")
    batch = None
    arrays = []
    for arity, x in zip(spec.inputs, inputs):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != arity:
            raise ShapeError(f"input of shape {x.shape} does not match arity {arity}")
        if batch is None:
            batch = x.shape[0]
        elif x.shape[0] != batch:
            raise ShapeError("input branches disagree on batch size")
        arrays.append(x)
    if mode == "train" and batch < 2 and any(l.batch_norm for l in spec.layers):
        raise InvalidBatchError("train-mode batch normalisation needs a batch of at least 2")

    cache = ForwardCache(id(params), params.version, mode)
    k = 0
    branch_outs = []
    for x, branch in zip(arrays, spec.branches):
        for layer in branch:
            x, lc = _layer_forward(params, k, layer, x, mode, update_stats)
            cache.layers.append(lc)
            k += 1
        branch_outs.append(x)
    h = branch_outs[0] if len(branch_outs) == 1 else np.concatenate(branch_outs, axis=1)
    for layer in spec.trunk:
        h, lc = _layer_forward(params, k, layer, h, mode, update_stats)
        cache.layers.append(lc)
        k += 1
    return h * spec.output_scale, cache


def _layer_backward(params: NetworkParams, grads: Gradients, k: int, layer: Layer,
                    lc: _LayerCache, dout: np.ndarray, mode: str) -> np.ndarray:
    if layer.batch_norm:
        gamma = params[f"{k}.gamma"]
        if mode == "train" and layer.activation == "relu":
            dz, dgamma, dbeta = kernels.bn_act_backward(
                np.ascontiguousarray(dout), lc.out, lc.xhat, gamma, lc.inv_std, True
            )
        else:
            dy = _activation_grad(dout, lc.out, layer.activation)
            if mode == "train":
                dz, dgamma, dbeta = kernels.bn_act_backward(
                    np.ascontiguousarray(dy), lc.out, lc.xhat, gamma, lc.inv_std, False
                )
            else:
                dbeta = dy.sum(axis=0)
                dgamma = (dy * lc.xhat).sum(axis=0)
                dz = dy * (gamma * lc.inv_std)
        grads[f"{k}.gamma"][:] = dgamma
        grads[f"{k}.beta"][:] = dbeta
    else:
        dz = _activation_grad(dout, lc.out, layer.activation)
    np.matmul(lc.x.T, dz, out=grads[f"{k}.kernel"])
    grads[f"{k}.bias"][:] = dz.sum(axis=0)
    return dz @ params[f"{k}.kernel"].T


def backward(params: NetworkParams, cache: ForwardCache, output_gradient):
    """Exact gradients of ``sum(outputs * output_gradient)``.

    Returns ``(Gradients, input_gradients)`` with one input gradient per
    branch.
    """
    if cache.params_id != id(params) or cache.version != params.version:
        raise ContractError("cache was produced by different or since-modified parameters")
    spec = params.spec
    layers = spec.layers
    if len(cache.layers) != len(layers):
        raise ContractError("cache does not match network layout")
    grads = Gradients(spec)
    d = np.asarray(output_gradient, dtype=np.float64) * spec.output_scale
    n_branch = sum(len(b) for b in spec.branches)
    for k in range(len(layers) - 1, n_branch - 1, -1):
        d = _layer_backward(params, grads, k, layers[k], cache.layers[k], d, cache.mode)

    input_grads = []
    col = 0
    k = 0
    for arity, branch in zip(spec.inputs, spec.branches):
        width = branch[-1].fan_out if branch else arity
        db = d[:, col:col + width]
        col += width
        for j in range(len(branch) - 1, -1, -1):
            db = _layer_backward(params, grads, k + j, branch[j], cache.layers[k + j], db, cache.mode)
        k += len(branch)
        input_grads.append(db)
    return grads, input_grads


@dataclass
class OptimizerState:
    """Adaptive-moment optimiser state for one network."""

    lr: float
    m: np.ndarray
    v: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    t: int = 0

    @classmethod
    def create(cls, params: NetworkParams, lr: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-7) -> "OptimizerState":
        n = params.n_trainable
        return cls(lr, np.zeros(n), np.zeros(n), beta1, beta2, eps, 0)

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.lr, self.m.copy(), self.v.copy(), self.beta1, self.beta2, self.eps, self.t)


def optimizer_step(state: OptimizerState, params: NetworkParams, grads: Gradients):
    """One bias-corrected adaptive-moment update, applied in place."""
    if grads.data.shape != state.m.shape or params.n_trainable != state.m.shape[0]:
        raise ShapeError("optimizer state, params and gradients are not congruent")
    state.t += 1
    t = state.t
    lr_t = state.lr * math.sqrt(1.0 - state.beta2 ** t) / (1.0 - state.beta1 ** t)
    kernels.adam_update(params.trainable, grads.data, state.m, state.v,
                        lr_t, state.beta1, state.beta2, state.eps)
    params.version += 1
    return params, state


def soft_update(target: NetworkParams, source: NetworkParams, mix: float) -> NetworkParams:
    """Polyak averaging over every tensor, running statistics included."""
    if not 0.0 <= mix <= 1.0:
        raise ValueError(f"mix must lie in [0, 1], got {mix}")
    if target.spec != source.spec:
        raise ShapeError("soft_update needs networks of the same spec")
    kernels.lerp_(target.data, source.data, float(mix))
    target.version += 1
    return target
