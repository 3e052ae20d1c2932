"""Triplet (rotate-to-attend) attention.

Three gates are computed on three orientations of the input:

* channel/width plane: swap C and H, Z-pool over the swapped-in axis;
* height/channel plane: swap C and W, Z-pool likewise;
* height/width plane: Z-pool over channels (plain spatial attention).

Each gate is ``sigmoid(BN(conv7x7(zpool(.))))`` with a 2 -> 1 channel conv and
no conv bias, which puts the learnable scalar count at 3 * (2*7*7 + 2) = 300.
The gated tensors are rotated back and averaged.
"""

import numpy as np

from .layers import ConvSpec, batch_norm, conv2d, zpool
from .module import Init, Module
from .tensor import Tensor, add, channel_gate, scale, sigmoid, swap_axes

# (label, axis swapped with channels); None is the unrotated spatial branch
BRANCHES = (("cw", 2), ("hc", 3), ("hw", None))


class TripletAttention(Module):
    def __init__(self, prefix, init, kernel=7):
        super().__init__(prefix)
        self.kernel = kernel
        self.spec = ConvSpec(2, 1, (kernel, kernel), stride=1, padding=kernel // 2, bias=False)
        self.weights = {}
        self.bns = {}
        for label, _ in BRANCHES:
            name = self._qualify(label)
            self.weights[label] = self.add_param(init.conv_weight(f"{name}.conv.weight", self.spec.weight_dims))
            self.bns[label] = self.add_bn(init.batch_norm(f"{name}.bn", 1))
        self.bypass = False
        self.last_gates = {}

    def _gate(self, label, t):
        n, _, h, w = t.dims
        if self.bypass:
            g = Tensor(np.ones((n, 1, h, w)))
        else:
            g = sigmoid(batch_norm(conv2d(zpool(t, "channel"), self.spec, self.weights[label]), self.bns[label]))
        self.last_gates[label] = g.data
        return channel_gate(t, g)

    def __call__(self, x):
        outs = []
        for label, axis in BRANCHES:
            if axis is None:
                outs.append(self._gate(label, x))
            else:
                rotated = swap_axes(x, 1, axis)
                outs.append(swap_axes(self._gate(label, rotated), 1, axis))
        return scale(add(add(outs[0], outs[1]), outs[2]), 1.0 / 3.0)


def attention_param_count(layer):
    """Number of learnable scalars in one attention layer."""
    return layer.param_count()


def triplet_attention(x, layer):
    return layer(x)


def make_attention(seed=0, kernel=7, prefix="va"):
    return TripletAttention(prefix, Init(seed), kernel)
