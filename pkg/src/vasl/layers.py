"""Convolution, transposed convolution, batch normalization, pooling, Z-pool.

All functions take and return :class:`~vasl.tensor.Tensor` objects and record
their own backward rule on the active tape.  Convolutions are
cross-correlations (no kernel flip) with zero padding.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _log_kink, _record

__all__ = [
    "ConvSpec",
    "BatchNormState",
    "conv2d",
    "transposed_conv2d",
    "batch_norm",
    "pool2d",
    "zpool",
]


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple = (3, 3)
    stride: int = 1
    padding: int = 0
    dilation: int = 1
    bias: bool = True

    def __post_init__(self):
        if isinstance(self.kernel, int):
            object.__setattr__(self, "kernel", (self.kernel, self.kernel))
        for field in ("in_channels", "out_channels", "stride", "dilation"):
            if getattr(self, field) < 1:
                raise ValueError(f"ConvSpec.{field} must be positive")
        if self.padding < 0 or min(self.kernel) < 1:
            raise ValueError("ConvSpec: invalid padding or kernel")

    @property
    def weight_dims(self):
        return (self.out_channels, self.in_channels) + tuple(self.kernel)

    def output_size(self, h, w):
        kh, kw = self.kernel
        d, s, p = self.dilation, self.stride, self.padding
        ho = (h + 2 * p - d * (kh - 1) - 1) // s + 1
        wo = (w + 2 * p - d * (kw - 1) - 1) // s + 1
        return ho, wo


def _window(xp, i, j, ho, wo, stride):
    return xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]


def _im2col(xp, kh, kw, ho, wo, stride, dilation):
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = _window(xp, i * dilation, j * dilation, ho, wo, stride)
    return cols.reshape(n, c * kh * kw, ho * wo)


def conv2d(x, spec, weight, bias=None):
    """Dilated, strided 2-D cross-correlation.

    ``weight`` has dims ``[out, in, kh, kw]``; ``bias`` (if the spec asks for
    one) has dims ``[1, out, 1, 1]``.
    """
    n, c, h, w = x.dims
    if c != spec.in_channels:
        raise ValueError(f"conv2d: input has {c} channels, spec expects {spec.in_channels}")
    if weight.dims != spec.weight_dims:
        raise ValueError(f"conv2d: weight dims {list(weight.dims)} != {list(spec.weight_dims)}")
    if spec.bias and bias is None:
        raise ValueError("conv2d: spec requires a bias tensor")
    kh, kw = spec.kernel
    s, p, d = spec.stride, spec.padding, spec.dilation
    ho, wo = spec.output_size(h, w)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: kernel span exceeds padded input {h}x{w} (pad {p}, dilation {d})")
    o = spec.out_channels
    wmat = weight.data.reshape(o, -1)

    pointwise = kh == kw == 1 and s == 1 and p == 0
    if pointwise:
        cols = x.data.reshape(n, c, h * w)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
        cols = _im2col(xp, kh, kw, ho, wo, s, d)
    out = np.matmul(wmat, cols).reshape(n, o, ho, wo)
    inputs = (x, weight)
    if spec.bias:
        out += bias.data.reshape(1, o, 1, 1)
        inputs = (x, weight, bias)
    result = Tensor(out)

    def bw(g):
        g2 = g.reshape(n, o, ho * wo)
        gw = np.zeros((o, cols.shape[1]))
        for b in range(n):
            gw += g2[b] @ cols[b].T
        gcols = np.matmul(wmat.T, g2)
        if pointwise:
            gx = gcols.reshape(n, c, h, w)
        else:
            gxp = np.zeros((n, c, h + 2 * p, w + 2 * p))
            gcols = gcols.reshape(n, c, kh, kw, ho, wo)
            for i in range(kh):
                for j in range(kw):
                    _window(gxp, i * d, j * d, ho, wo, s)[...] += gcols[:, :, i, j]
            gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        grads = (gx, gw.reshape(weight.dims))
        if spec.bias:
            grads += (_channel_sum(g).reshape(1, o, 1, 1),)
        return grads

    return _record(result, inputs, bw)


def transposed_conv2d(x, weight, bias=None):
    """Kernel-2, stride-2 transposed convolution; doubles height and width.

    ``weight`` has dims ``[in, out, 2, 2]``.  Windows never overlap, so each
    output pixel receives exactly one input contribution per input channel.
    """
    n, c, h, w = x.dims
    if weight.dims[0] != c or weight.dims[2:] != (2, 2):
        raise ValueError(f"transposed_conv2d: weight dims {list(weight.dims)} do not fit input {list(x.dims)}")
    o = weight.dims[1]
    # [N,H,W,O,2,2] -> [N,O,H,2,W,2]
    out = np.tensordot(x.data, weight.data, axes=([1], [0]))
    out = out.transpose(0, 3, 1, 4, 2, 5).reshape(n, o, 2 * h, 2 * w)
    inputs = (x, weight)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)
        inputs = (x, weight, bias)
    result = Tensor(np.ascontiguousarray(out))

    def bw(g):
        g6 = g.reshape(n, o, h, 2, w, 2)
        gx = np.tensordot(g6, weight.data, axes=([1, 3, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        gw = np.tensordot(x.data, g6, axes=([0, 2, 3], [0, 2, 4]))
        grads = (np.ascontiguousarray(gx), gw)
        if bias is not None:
            grads += (_channel_sum(g).reshape(1, o, 1, 1),)
        return grads

    return _record(result, inputs, bw)


class BatchNormState:
    """Per-channel affine parameters plus running statistics."""

    def __init__(self, channels, gamma=None, beta=None, momentum=0.1, eps=1e-5, name=""):
        self.channels = channels
        self.gamma = gamma if gamma is not None else Tensor(np.ones((1, channels, 1, 1)), True)
        self.beta = beta if beta is not None else Tensor(np.zeros((1, channels, 1, 1)), True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps
        self.mode = "train"
        self.name = name

    def train(self):
        self.mode = "train"

    def eval(self):
        self.mode = "eval"


def _channel_dot(a, b):
    # per-channel sum of a*b; einsum avoids the slow strided (0, 2, 3) reduction
    n, c = a.shape[:2]
    return np.einsum("nck,nck->c", a.reshape(n, c, -1), b.reshape(n, c, -1))


def _channel_sum(a):
    n, c = a.shape[:2]
    return a.reshape(n, c, -1).sum(axis=2).sum(axis=0)


def batch_norm(x, state):
    n, c, h, w = x.dims
    if c != state.channels:
        raise ValueError(f"batch_norm: {c} channels, state has {state.channels}")
    m = n * h * w
    if m == 0:
        raise ValueError("batch_norm: empty batch*spatial extent")
    gamma = state.gamma.data.reshape(1, c, 1, 1)
    beta = state.beta.data.reshape(1, c, 1, 1)

    if state.mode == "train":
        mu = _channel_sum(x.data) / m
        xc = x.data - mu.reshape(1, c, 1, 1)
        var = _channel_dot(xc, xc) / m
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = xc * inv.reshape(1, c, 1, 1)
        mom = state.momentum
        unbiased = var * (m / (m - 1)) if m > 1 else var
        state.running_mean = (1.0 - mom) * state.running_mean + mom * mu
        state.running_var = (1.0 - mom) * state.running_var + mom * unbiased

        def bw(g):
            dxhat = g * gamma
            gsum = _channel_sum(g)
            gdot = _channel_dot(g, xhat)
            # dxhat = g * gamma, so its sums follow from the sums of g
            s1 = (gsum * gamma.reshape(c)).reshape(1, c, 1, 1)
            s2 = (gdot * gamma.reshape(c)).reshape(1, c, 1, 1)
            gx = (inv.reshape(1, c, 1, 1) / m) * (m * dxhat - s1 - xhat * s2)
            return gx, gdot.reshape(1, c, 1, 1), gsum.reshape(1, c, 1, 1)
    else:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)

        def bw(g):
            return (
                g * (gamma * inv.reshape(1, c, 1, 1)),
                _channel_dot(g, xhat).reshape(1, c, 1, 1),
                _channel_sum(g).reshape(1, c, 1, 1),
            )

    out = Tensor(xhat * gamma + beta)
    return _record(out, (x, state.gamma, state.beta), bw)


def pool2d(x, kind="avg", k=2, s=2, pad=0):
    """Average or max pooling.

    The default k=2, s=2 window requires even height and width.  Max pooling
    pads with -inf and breaks ties toward the first element in row-major
    window order; average pooling counts padded zeros.
    """
    if kind not in ("avg", "max"):
        raise ValueError(f"pool2d: unknown kind {kind!r}")
    n, c, h, w = x.dims
    if k == 2 and s == 2 and pad == 0 and (h % 2 or w % 2):
        raise ValueError(f"pool2d: odd spatial dims {h}x{w}")
    ho = (h + 2 * pad - k) // s + 1
    wo = (w + 2 * pad - k) // s + 1
    if ho < 1 or wo < 1:
        raise ValueError("pool2d: window larger than input")
    fill = -np.inf if kind == "max" else 0.0
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=fill) if pad else x.data
    taps = [(i, j) for i in range(k) for j in range(k)]
    hp, wp = xp.shape[2:]

    if kind == "avg":
        out = sum(_window(xp, i, j, ho, wo, s) for i, j in taps) / (k * k)

        def bw(g):
            gxp = np.zeros((n, c, hp, wp))
            share = g / (k * k)
            for i, j in taps:
                _window(gxp, i, j, ho, wo, s)[...] += share
            return (gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp,)
    else:
        stack = np.stack([_window(xp, i, j, ho, wo, s) for i, j in taps], axis=-1)
        arg = stack.argmax(axis=-1)
        _log_kink(arg)
        out = np.take_along_axis(stack, arg[..., None], axis=-1)[..., 0]

        def bw(g):
            gxp = np.zeros((n, c, hp, wp))
            for t, (i, j) in enumerate(taps):
                _window(gxp, i, j, ho, wo, s)[...] += np.where(arg == t, g, 0.0)
            return (gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp,)

    return _record(Tensor(np.ascontiguousarray(out)), (x,), bw)


_AXES = {"channel": 1, "height": 2, "width": 3}


def zpool(x, axis="channel"):
    """Stack [max, mean] over ``axis``, reducing that axis to extent 2."""
    ax = _AXES.get(axis, axis)
    if ax not in (1, 2, 3):
        raise ValueError(f"zpool: bad axis {axis!r}")
    extent = x.dims[ax]
    if extent < 1:
        raise ValueError("zpool: empty reduction axis")
    arg = x.data.argmax(axis=ax)
    _log_kink(arg)
    mx = np.take_along_axis(x.data, np.expand_dims(arg, ax), axis=ax)
    mean = x.data.mean(axis=ax, keepdims=True)
    out = Tensor(np.concatenate([mx, mean], axis=ax))

    def bw(g):
        gmax = np.take(g, [0], axis=ax)
        gmean = np.take(g, [1], axis=ax)
        gx = np.broadcast_to(gmean / extent, x.dims).copy()
        cur = np.take_along_axis(gx, np.expand_dims(arg, ax), axis=ax)
        np.put_along_axis(gx, np.expand_dims(arg, ax), cur + gmax, axis=ax)
        return (gx,)

    return _record(out, (x,), bw)
