"""Multi-domain fusion (merge -> attention -> squeeze -> pool) and the
multi-receptive-field upsampling decoder."""

import math

from .attention import TripletAttention
from .layers import ConvSpec, batch_norm, conv2d, pool2d, transposed_conv2d
from .module import Module
from .tensor import concat_channels, relu, sigmoid


class VaDs(Module):
    """Concatenate domain features, attend, squeeze with a 1x1 conv, avg-pool /2."""

    def __init__(self, prefix, init, in_channels, squeeze_out, attention_kernel=7):
        super().__init__(prefix)
        self.in_channels = in_channels
        self.att = self.add_child(TripletAttention(self._qualify("att"), init, attention_kernel))
        self.spec = ConvSpec(in_channels, squeeze_out, (1, 1), bias=True)
        self.w = self.add_param(init.conv_weight(self._qualify("squeeze.weight"), self.spec.weight_dims))
        self.b = self.add_param(init.zeros(self._qualify("squeeze.bias"), (1, squeeze_out, 1, 1)))
        self.out_channels = squeeze_out

    def __call__(self, features):
        if not features:
            raise ValueError("VA-DS needs at least one feature map")
        merged = concat_channels(features)
        if merged.dims[1] != self.in_channels:
            raise ValueError(f"VA-DS expects {self.in_channels} merged channels, got {merged.dims[1]}")
        return pool2d(conv2d(self.att(merged), self.spec, self.w, self.b), "avg")


class Aspp(Module):
    """Parallel 3x3 convs at several dilations, concatenated and fused by 1x1 conv."""

    def __init__(self, prefix, init, channels, dilations=(2, 3, 4)):
        super().__init__(prefix)
        self.dilations = tuple(dilations)
        self.branch_specs = []
        self.branch_w = []
        for d in self.dilations:
            spec = ConvSpec(channels, channels, (3, 3), padding=d, dilation=d, bias=False)
            self.branch_specs.append(spec)
            self.branch_w.append(self.add_param(init.conv_weight(self._qualify(f"d{d}.weight"), spec.weight_dims)))
        self.fuse_spec = ConvSpec(channels * len(self.dilations), channels, (1, 1), bias=True)
        self.fuse_w = self.add_param(init.conv_weight(self._qualify("fuse.weight"), self.fuse_spec.weight_dims))
        self.fuse_b = self.add_param(init.zeros(self._qualify("fuse.bias"), (1, channels, 1, 1)))

    def __call__(self, x):
        branches = [conv2d(x, s, w) for s, w in zip(self.branch_specs, self.branch_w)]
        return conv2d(concat_channels(branches), self.fuse_spec, self.fuse_w, self.fuse_b)


class VaMrfu(Module):
    """Transposed conv (k=s=2) -> BN -> ReLU -> ASPP -> attention."""

    def __init__(self, prefix, init, in_channels, out_channels, dilations=(2, 3, 4), attention_kernel=7):
        super().__init__(prefix)
        self.in_channels = in_channels
        self.out_channels = out_channels
        dims = (in_channels, out_channels, 2, 2)
        # each output pixel sees one tap per input channel
        self.up_w = self.add_param(init.conv_weight(self._qualify("up.weight"), dims, fan_in=in_channels))
        self.bn = self.add_bn(init.batch_norm(self._qualify("bn"), out_channels))
        self.aspp = self.add_child(Aspp(self._qualify("aspp"), init, out_channels, dilations))
        self.att = self.add_child(TripletAttention(self._qualify("att"), init, attention_kernel))

    def __call__(self, x):
        x = relu(batch_norm(transposed_conv2d(x, self.up_w), self.bn))
        return self.att(self.aspp(x))


class MaskHead(Module):
    """1x1 conv to one channel followed by a sigmoid.

    The bias starts at ``logit(prior)`` so the first predictions sit near the
    expected foreground rate instead of 0.5.
    """

    def __init__(self, prefix, init, in_channels, prior=0.5):
        super().__init__(prefix)
        self.spec = ConvSpec(in_channels, 1, (1, 1), bias=True)
        self.w = self.add_param(init.conv_weight(self._qualify("weight"), self.spec.weight_dims))
        self.b = self.add_param(init.zeros(self._qualify("bias"), (1, 1, 1, 1)))
        self.b.data[...] = math.log(prior / (1.0 - prior))

    def __call__(self, x):
        return sigmoid(conv2d(x, self.spec, self.w, self.b))


def va_ds_forward(features, vads):
    return vads(features)


def aspp_forward(x, aspp):
    return aspp(x)


def va_mrfu_forward(x, stage):
    return stage(x)


def mask_head(x, head):
    return head(x)
