"""Per-domain feature extractor: truncated dense backbone with attention.

Layout (input 256x256)::

    stem conv 7x7/2 -> BN -> ReLU -> max-pool 3x3/2      (/4)
    dense block 1 -> triplet attention
    transition: BN -> ReLU -> conv 1x1 (half) -> avg-pool 2x2   (/2)
    dense block 2 -> triplet attention

Only the first two dense blocks and the first transition of the usual
four-block backbone are kept.
"""

from dataclasses import dataclass

from .attention import TripletAttention
from .layers import ConvSpec, batch_norm, conv2d, pool2d
from .module import Module
from .tensor import concat_channels, relu

DOMAIN_CHANNELS = {"rgb": 3, "edge": 1, "depth": 1}


@dataclass(frozen=True)
class DenseBlockSpec:
    num_layers: int = 4
    growth_rate: int = 8
    bottleneck_factor: int = 4

    def out_channels(self, c_in):
        return c_in + self.num_layers * self.growth_rate


@dataclass(frozen=True)
class ExtractorConfig:
    domain: str = "rgb"
    stem_channels: int = 16
    blocks: tuple = (DenseBlockSpec(), DenseBlockSpec())
    attention_kernel: int = 7

    def __post_init__(self):
        if self.domain not in DOMAIN_CHANNELS:
            raise ValueError(f"unknown domain {self.domain!r}")
        if len(self.blocks) != 2:
            raise ValueError("the extractor keeps exactly two dense blocks")

    @property
    def in_channels(self):
        return DOMAIN_CHANNELS[self.domain]

    def channel_trace(self):
        """Widths after stem, block 1, transition, block 2."""
        stem = self.stem_channels
        b1 = self.blocks[0].out_channels(stem)
        tr = b1 // 2
        b2 = self.blocks[1].out_channels(tr)
        return stem, b1, tr, b2

    @property
    def out_channels(self):
        return self.channel_trace()[-1]


class DenseLayer(Module):
    """BN -> ReLU -> 1x1 conv (bottleneck) -> BN -> ReLU -> 3x3 conv (growth)."""

    def __init__(self, prefix, init, in_channels, spec):
        super().__init__(prefix)
        width = spec.bottleneck_factor * spec.growth_rate
        self.in_channels = in_channels
        self.bn1 = self.add_bn(init.batch_norm(self._qualify("bn1"), in_channels))
        self.spec1 = ConvSpec(in_channels, width, (1, 1), bias=False)
        self.w1 = self.add_param(init.conv_weight(self._qualify("conv1.weight"), self.spec1.weight_dims))
        self.bn2 = self.add_bn(init.batch_norm(self._qualify("bn2"), width))
        self.spec2 = ConvSpec(width, spec.growth_rate, (3, 3), padding=1, bias=False)
        self.w2 = self.add_param(init.conv_weight(self._qualify("conv2.weight"), self.spec2.weight_dims))

    def __call__(self, x):
        if x.dims[1] != self.in_channels:
            raise ValueError(f"{self.prefix}: expects {self.in_channels} channels, got {x.dims[1]}")
        h = conv2d(relu(batch_norm(x, self.bn1)), self.spec1, self.w1)
        return conv2d(relu(batch_norm(h, self.bn2)), self.spec2, self.w2)


class DenseBlock(Module):
    def __init__(self, prefix, init, in_channels, spec):
        super().__init__(prefix)
        self.spec = spec
        self.in_channels = in_channels
        self.layers = []
        for k in range(spec.num_layers):
            width = in_channels + k * spec.growth_rate
            layer = self.add_child(DenseLayer(self._qualify(f"layer{k}"), init, width, spec))
            assert layer.in_channels == in_channels + k * spec.growth_rate
            self.layers.append(layer)
        self.out_channels = spec.out_channels(in_channels)

    def __call__(self, x):
        features = [x]
        for layer in self.layers:
            features.append(layer(concat_channels(features)))
        return concat_channels(features)


class Transition(Module):
    def __init__(self, prefix, init, in_channels):
        super().__init__(prefix)
        self.out_channels = in_channels // 2
        self.bn = self.add_bn(init.batch_norm(self._qualify("bn"), in_channels))
        self.spec = ConvSpec(in_channels, self.out_channels, (1, 1), bias=False)
        self.w = self.add_param(init.conv_weight(self._qualify("conv.weight"), self.spec.weight_dims))

    def __call__(self, x):
        return pool2d(conv2d(relu(batch_norm(x, self.bn)), self.spec, self.w), "avg")


class VaMdfe(Module):
    """One domain's extractor."""

    def __init__(self, prefix, init, cfg):
        super().__init__(prefix)
        self.cfg = cfg
        stem_c, b1_c, tr_c, b2_c = cfg.channel_trace()
        self.stem_spec = ConvSpec(cfg.in_channels, stem_c, (7, 7), stride=2, padding=3, bias=False)
        self.stem_w = self.add_param(init.conv_weight(self._qualify("stem.conv.weight"), self.stem_spec.weight_dims))
        self.stem_bn = self.add_bn(init.batch_norm(self._qualify("stem.bn"), stem_c))
        self.block1 = self.add_child(DenseBlock(self._qualify("block1"), init, stem_c, cfg.blocks[0]))
        self.att1 = self.add_child(TripletAttention(self._qualify("att1"), init, cfg.attention_kernel))
        self.transition = self.add_child(Transition(self._qualify("transition1"), init, b1_c))
        self.block2 = self.add_child(DenseBlock(self._qualify("block2"), init, tr_c, cfg.blocks[1]))
        self.att2 = self.add_child(TripletAttention(self._qualify("att2"), init, cfg.attention_kernel))
        self.out_channels = b2_c

    def __call__(self, image):
        if image.dims[1] != self.cfg.in_channels:
            raise ValueError(
                f"{self.cfg.domain} extractor expects {self.cfg.in_channels} channels, got {image.dims[1]}"
            )
        x = relu(batch_norm(conv2d(image, self.stem_spec, self.stem_w), self.stem_bn))
        x = pool2d(x, "max", k=3, s=2, pad=1)
        x = self.att1(self.block1(x))
        x = self.transition(x)
        return self.att2(self.block2(x))


def dense_layer(x, layer):
    return layer(x)


def dense_block(x, block):
    return block(x)


def va_mdfe_forward(image, extractor):
    return extractor(image)
