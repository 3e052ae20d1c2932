"""Tiny container base for the network blocks.

Parameters carry fully qualified dotted names (``rgb.block1.layer0.conv1.weight``)
so that initialization, serialization and optimizer state can all be keyed by
name and stay independent of construction order.
"""

import math

import numpy as np

from . import rng
from .layers import BatchNormState
from .tensor import Tensor


class Init:
    """Seeded, name-keyed parameter initializer."""

    def __init__(self, seed, bn_momentum=0.1, bn_eps=1e-5):
        self.seed = seed
        self.bn_momentum = bn_momentum
        self.bn_eps = bn_eps

    def normal(self, name, dims, std):
        n = int(np.prod(dims))
        vals = rng.standard_normal(n, rng.derive_seed(self.seed, rng.string_key(name)))
        return Tensor(vals.reshape(dims) * std, requires_grad=True, name=name)

    def conv_weight(self, name, dims, fan_in=None):
        if fan_in is None:
            fan_in = dims[1] * dims[2] * dims[3]
        return self.normal(name, dims, math.sqrt(2.0 / fan_in))

    def zeros(self, name, dims):
        return Tensor(np.zeros(dims), requires_grad=True, name=name)

    def batch_norm(self, name, channels):
        gamma = Tensor(np.ones((1, channels, 1, 1)), True, name=f"{name}.gamma")
        beta = Tensor(np.zeros((1, channels, 1, 1)), True, name=f"{name}.beta")
        return BatchNormState(channels, gamma, beta, self.bn_momentum, self.bn_eps, name=name)


class Module:
    def __init__(self, prefix):
        self.prefix = prefix
        self._params = []
        self._bns = []
        self._children = []

    def _qualify(self, local):
        return f"{self.prefix}.{local}" if self.prefix else local

    def add_param(self, tensor):
        self._params.append(tensor)
        return tensor

    def add_bn(self, state):
        self._bns.append(state)
        self._params.extend([state.gamma, state.beta])
        return state

    def add_child(self, module):
        self._children.append(module)
        return module

    def modules(self):
        yield self
        for child in self._children:
            yield from child.modules()

    def parameters(self):
        for m in self.modules():
            yield from m._params

    def named_parameters(self):
        return {p.name: p for p in self.parameters()}

    def bn_states(self):
        for m in self.modules():
            yield from m._bns

    def param_count(self):
        return sum(p.size for p in self.parameters())

    def train(self):
        for bn in self.bn_states():
            bn.train()
        return self

    def eval(self):
        for bn in self.bn_states():
            bn.eval()
        return self
