"""Layer types. Each layer is stateless; parameters live in the owning stack.

``forward(x, params) -> (y, cache)`` and
``backward(g, cache, params, want_params) -> (gx, [param grads])``.
Dense layers act on ``(M, features)``; the rest on ``(N, C, H, W)``.
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from . import kernels


class Layer:
    kind = ""

    def param_shapes(self):
        """List of ``(shape, fan_in, fan_out)``; weights first, then biases (fan 0)."""
        return []

    def spec(self) -> dict:
        return {"type": self.kind}

    def out_channels(self, c_in):
        return c_in

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.spec().items() if k != "type")
        return f"{type(self).__name__}({args})"


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out):
        self.n_in, self.n_out = int(n_in), int(n_out)

    def param_shapes(self):
        return [((self.n_in, self.n_out), self.n_in, self.n_out), ((self.n_out,), 0, 0)]

    def spec(self):
        return {"type": self.kind, "in": self.n_in, "out": self.n_out}

    def out_channels(self, c_in):
        if c_in != self.n_in:
            raise ShapeError(f"dense layer expects {self.n_in} features, got {c_in}")
        return self.n_out

    def forward(self, x, params):
        w, b = params
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"dense layer expects (M, {self.n_in}), got {x.shape}")
        return x @ w + b, x

    def backward(self, g, x, params, want_params):
        w, _ = params
        grads = [x.T @ g, g.sum(axis=0)] if want_params else None
        return g @ w.T, grads


class Conv2d(Layer):
    """k x k convolution, zero padding k // 2, stride 1 or 2."""

    kind = "conv"

    def __init__(self, c_in, c_out, k=3, stride=1):
        if k % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.c_in, self.c_out, self.k, self.stride = int(c_in), int(c_out), int(k), int(stride)

    def param_shapes(self):
        fan_in = self.c_in * self.k * self.k
        fan_out = self.c_out * self.k * self.k
        return [((fan_in, self.c_out), fan_in, fan_out), ((self.c_out,), 0, 0)]

    def spec(self):
        return {"type": self.kind, "in": self.c_in, "out": self.c_out,
                "k": self.k, "stride": self.stride}

    def out_channels(self, c_in):
        if c_in != self.c_in:
            raise ShapeError(f"conv layer expects {self.c_in} channels, got {c_in}")
        return self.c_out

    def forward(self, x, params):
        w, b = params
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeError(f"conv layer expects (N, {self.c_in}, H, W), got {x.shape}")
        n, _, h, wd = x.shape
        p, k, s = self.k // 2, self.k, self.stride
        ho, wo = (h + 2 * p - k) // s + 1, (wd + 2 * p - k) // s + 1
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else np.ascontiguousarray(x)
        cols = kernels.im2col(xp, k, s, ho, wo).reshape(n * ho * wo, -1)
        y = cols @ w + b
        y = np.ascontiguousarray(y.reshape(n, ho, wo, self.c_out).transpose(0, 3, 1, 2))
        return y, (cols, xp.shape, (n, ho, wo))

    def backward(self, g, cache, params, want_params):
        w, _ = params
        cols, padded_shape, (n, ho, wo) = cache
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, self.c_out)
        grads = [cols.T @ g2, g2.sum(axis=0)] if want_params else None
        dcols = (g2 @ w.T).reshape(n, ho, wo, self.c_in, self.k, self.k)
        dxp = kernels.col2im(dcols, padded_shape, self.k, self.stride)
        p = self.k // 2
        gx = dxp[:, :, p:padded_shape[2] - p, p:padded_shape[3] - p] if p else dxp
        return np.ascontiguousarray(gx), grads


class Activation(Layer):
    kind = "act"
    NAMES = ("relu", "tanh", "tanh01", "identity")

    def __init__(self, name):
        if name not in self.NAMES:
            raise ValueError(f"unknown activation {name!r}")
        self.name = name

    def spec(self):
        return {"type": self.kind, "name": self.name}

    def forward(self, x, params):
        if self.name == "relu":
            return np.maximum(x, 0.0), x > 0
        if self.name == "tanh":
            y = np.tanh(x)
            return y, y
        if self.name == "tanh01":
            t = np.tanh(x)
            return 0.5 * (t + 1.0), t
        return x, None

    def backward(self, g, cache, params, want_params):
        if self.name == "relu":
            return g * cache, None
        if self.name == "tanh":
            return g * (1.0 - cache * cache), None
        if self.name == "tanh01":
            return 0.5 * g * (1.0 - cache * cache), None
        return g, None


class Upsample(Layer):
    """Nearest-neighbour upsampling by an integer factor."""

    kind = "up"

    def __init__(self, factor=2):
        self.factor = int(factor)

    def spec(self):
        return {"type": self.kind, "factor": self.factor}

    def forward(self, x, params):
        f = self.factor
        return x.repeat(f, axis=2).repeat(f, axis=3), None

    def backward(self, g, cache, params, want_params):
        f = self.factor
        n, c, h, w = g.shape
        return g.reshape(n, c, h // f, f, w // f, f).sum(axis=(3, 5)), None


class Downsample(Layer):
    """Nearest-neighbour (strided pick) downsampling."""

    kind = "down"

    def __init__(self, factor=2):
        self.factor = int(factor)

    def spec(self):
        return {"type": self.kind, "factor": self.factor}

    def forward(self, x, params):
        f = self.factor
        if x.shape[2] % f or x.shape[3] % f:
            raise ShapeError(f"spatial dims {x.shape[2:]} not divisible by {f}")
        return np.ascontiguousarray(x[:, :, ::f, ::f]), x.shape

    def backward(self, g, shape, params, want_params):
        f = self.factor
        gx = np.zeros(shape)
        gx[:, :, ::f, ::f] = g
        return gx, None


class Skip(Layer):
    """Marks an activation to be concatenated later by ``ConcatSkip(tag)``."""

    kind = "skip"

    def __init__(self, tag):
        self.tag = str(tag)

    def spec(self):
        return {"type": self.kind, "tag": self.tag}


class ConcatSkip(Layer):
    """Channel-concatenate the activation saved under ``tag`` after the current one."""

    kind = "concat"

    def __init__(self, tag, channels):
        self.tag = str(tag)
        self.channels = int(channels)

    def spec(self):
        return {"type": self.kind, "tag": self.tag, "channels": self.channels}

    def out_channels(self, c_in):
        return c_in + self.channels


_KINDS = {cls.kind: cls for cls in (Dense, Conv2d, Activation, Upsample, Downsample,
                                    Skip, ConcatSkip)}


def layer_from_spec(spec: dict) -> Layer:
    spec = dict(spec)
    kind = spec.pop("type")
    cls = _KINDS[kind]
    if cls is Dense:
        return Dense(spec["in"], spec["out"])
    if cls is Conv2d:
        return Conv2d(spec["in"], spec["out"], spec["k"], spec["stride"])
    if cls is Activation:
        return Activation(spec["name"])
    if cls in (Upsample, Downsample):
        return cls(spec["factor"])
    if cls is Skip:
        return Skip(spec["tag"])
    return ConcatSkip(spec["tag"], spec["channels"])
