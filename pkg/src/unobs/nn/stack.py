"""Sequential layer stacks with a flat parameter vector and reverse-mode gradients."""
from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass

import numpy as np

from ..errors import FrozenError, ShapeError, TapeError
from .layers import ConcatSkip, Conv2d, Dense, Layer, Skip

_stack_ids = itertools.count()


class LayerStack:
    """An ordered list of layers sharing one flat float64 parameter vector.

    Weights are initialized uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)),
    biases to zero, from ``numpy.random.default_rng(seed)``.
    """

    def __init__(self, layers, seed=0, params=None):
        self.layers: list[Layer] = list(layers)
        self.seed = int(seed)
        self._slices = []
        offset = 0
        for layer in self.layers:
            entries = []
            for shape, _, _ in layer.param_shapes():
                size = int(np.prod(shape))
                entries.append((offset, size, shape))
                offset += size
            self._slices.append(entries)
        self.n_params = offset
        self.frozen = False
        self._version = 0
        self._id = next(_stack_ids)
        self._check_channels()
        if params is None:
            params = self._init_params()
        self._params = np.empty(self.n_params)
        self.set_params(params)

    def _check_channels(self):
        c = self.in_channels
        tags = {}
        for layer in self.layers:
            if isinstance(layer, Skip):
                tags[layer.tag] = c
            elif isinstance(layer, ConcatSkip):
                if tags.get(layer.tag) != layer.channels:
                    raise ShapeError(f"concat-skip {layer.tag!r} does not match its skip")
            c = layer.out_channels(c)
        self.out_channels = c

    @property
    def in_channels(self):
        for layer in self.layers:
            if isinstance(layer, (Dense, Conv2d)):
                return layer.n_in if isinstance(layer, Dense) else layer.c_in
        raise ShapeError("stack has no dense or conv layer")

    def _init_params(self):
        rng = np.random.default_rng(self.seed)
        p = np.zeros(self.n_params)
        for layer, entries in zip(self.layers, self._slices):
            for (off, size, _), (_, fan_in, fan_out) in zip(entries, layer.param_shapes()):
                if fan_in:
                    a = np.sqrt(6.0 / (fan_in + fan_out))
                    p[off:off + size] = rng.uniform(-a, a, size)
        return p

    # parameters ------------------------------------------------------------

    @property
    def params(self) -> np.ndarray:
        view = self._params.view()
        view.flags.writeable = False
        return view

    def set_params(self, params):
        if self.frozen:
            raise FrozenError("stack is frozen")
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {params.shape}")
        self._params[:] = params
        self._version += 1

    def freeze(self):
        self.frozen = True
        return self

    def layer_params(self, i):
        return [self._params[off:off + size].reshape(shape) for off, size, shape in self._slices[i]]

    def checksum(self) -> str:
        return hashlib.sha256(self._params.tobytes()).hexdigest()

    def spec(self) -> list:
        return [layer.spec() for layer in self.layers]

    def copy(self) -> "LayerStack":
        return LayerStack([_clone(l) for l in self.layers], self.seed, self._params.copy())

    def __call__(self, x):
        return forward(self, x)[0]

    def __repr__(self):
        return f"LayerStack({len(self.layers)} layers, {self.n_params} params)"


def _clone(layer):
    from .layers import layer_from_spec

    return layer_from_spec(layer.spec())


@dataclass
class Tape:
    stack_id: int
    version: int
    caches: list
    input_shape: tuple


def forward(stack: LayerStack, x):
    """Run the stack; returns ``(output, tape)``. The tape feeds ``backward``."""
    x = np.asarray(x, dtype=np.float64)
    first = next(l for l in stack.layers if isinstance(l, (Dense, Conv2d)))
    if isinstance(first, Dense) and (x.ndim != 2 or x.shape[1] != first.n_in):
        raise ShapeError(f"stack expects (M, {first.n_in}) input, got {x.shape}")
    if isinstance(first, Conv2d) and (x.ndim != 4 or x.shape[1] != first.c_in):
        raise ShapeError(f"stack expects (N, {first.c_in}, H, W) input, got {x.shape}")
    caches = []
    saved = {}
    h = x
    for i, layer in enumerate(stack.layers):
        if isinstance(layer, Skip):
            saved[layer.tag] = h
            caches.append(None)
        elif isinstance(layer, ConcatSkip):
            other = saved[layer.tag]
            if other.shape[2:] != h.shape[2:] or other.shape[0] != h.shape[0]:
                raise ShapeError(f"concat-skip {layer.tag!r}: {other.shape} vs {h.shape}")
            caches.append(h.shape[1])
            h = np.concatenate([h, other], axis=1)
        else:
            h, cache = layer.forward(h, stack.layer_params(i))
            caches.append(cache)
    return h, Tape(stack._id, stack._version, caches, x.shape)


def backward(stack: LayerStack, tape: Tape, grad, wrt="params"):
    """Reverse accumulation of ``grad`` (d loss / d output).

    ``wrt`` is ``"params"`` (flat gradient vector), ``"input"`` (d loss / d input,
    parameter gradients are never formed) or ``"both"``.
    """
    if wrt not in ("params", "input", "both"):
        raise ValueError(f"wrt must be params, input or both, not {wrt!r}")
    if tape.stack_id != stack._id or tape.version != stack._version:
        raise TapeError("tape does not belong to the current parameters of this stack")
    want_params = wrt != "input"
    if want_params and stack.frozen:
        raise FrozenError("parameter gradients requested for a frozen stack")
    g = np.asarray(grad, dtype=np.float64)
    pgrad = np.zeros(stack.n_params) if want_params else None
    pending = {}
    for i in range(len(stack.layers) - 1, -1, -1):
        layer = stack.layers[i]
        cache = tape.caches[i]
        if isinstance(layer, ConcatSkip):
            c = cache
            pending[layer.tag] = g[:, c:]
            g = g[:, :c]
            continue
        if isinstance(layer, Skip):
            g = g + pending.pop(layer.tag)
            continue
        g, grads = layer.backward(g, cache, stack.layer_params(i), want_params)
        if grads:
            for (off, size, _), gp in zip(stack._slices[i], grads):
                pgrad[off:off + size] = gp.ravel()
    if g.shape != tape.input_shape:
        raise ShapeError("gradient shape does not match the recorded input")
    if wrt == "params":
        return pgrad
    if wrt == "input":
        return g
    return pgrad, g


def mlp(sizes, activation="relu", out_activation=None, seed=0) -> LayerStack:
    from .layers import Activation

    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(Dense(a, b))
        last = i == len(sizes) - 2
        act = out_activation if last else activation
        if act:
            layers.append(Activation(act))
    return LayerStack(layers, seed=seed)


def pixelwise(stack: LayerStack, x):
    """Apply a dense stack independently at every pixel of ``(N, C, H, W)``."""
    n, c, h, w = x.shape
    flat = x.transpose(0, 2, 3, 1).reshape(-1, c)
    y, tape = forward(stack, flat)
    return y.reshape(n, h, w, -1).transpose(0, 3, 1, 2), tape


def pixelwise_grad(g):
    """Gradient of a ``pixelwise`` output, flattened to match its tape."""
    return g.transpose(0, 2, 3, 1).reshape(-1, g.shape[1])


def unpixelwise(gflat, shape):
    n, _, h, w = shape
    return gflat.reshape(n, h, w, -1).transpose(0, 3, 1, 2)
