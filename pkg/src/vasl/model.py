"""Full splice-localization network and its parameter store."""

import numpy as np

from .attention import TripletAttention
from .config import ModelConfig
from .extractor import DenseBlockSpec, ExtractorConfig, VaMdfe
from .fusion import MaskHead, VaDs, VaMrfu
from .module import Init, Module
from .tensor import Tensor


class SpliceNet(Module):
    """Per-domain extractors -> VA-DS -> upsampling stages -> mask head."""

    def __init__(self, cfg, init):
        super().__init__("")
        self.cfg = cfg
        blocks = tuple(
            DenseBlockSpec(n, cfg.growth_rate, cfg.bottleneck_factor) for n in cfg.block_layers
        )
        self.extractors = {}
        for domain in cfg.enabled_domains:
            ecfg = ExtractorConfig(domain, cfg.stem_channels, blocks, cfg.attention_kernel)
            self.extractors[domain] = self.add_child(VaMdfe(domain, init, ecfg))
        merged = sum(e.out_channels for e in self.extractors.values())
        self.vads = self.add_child(VaDs("vads", init, merged, cfg.squeeze_out, cfg.attention_kernel))
        self.stages = []
        width = cfg.squeeze_out
        for k, out in enumerate(cfg.mrfu_widths):
            stage = VaMrfu(f"mrfu{k}", init, width, out, cfg.dilations, cfg.attention_kernel)
            self.stages.append(self.add_child(stage))
            width = out
        self.head = self.add_child(MaskHead("head", init, width, cfg.head_prior))

    @property
    def domains(self):
        return self.cfg.enabled_domains

    def attention_layers(self):
        return [m for m in self.modules() if isinstance(m, TripletAttention)]

    def __call__(self, inputs):
        """``inputs`` maps each enabled domain to an ``[N, C, H, W]`` tensor."""
        missing = [d for d in self.domains if d not in inputs]
        if missing:
            raise ValueError(f"missing input domains {missing}")
        feats = [self.extractors[d](inputs[d]) for d in self.domains]
        x = self.vads(feats)
        for stage in self.stages:
            x = stage(x)
        return self.head(x)

    def predict(self, inputs):
        """Eval-mode probability map as a numpy array ``[N, 1, H, W]``."""
        self.eval()
        try:
            return self(inputs).data
        finally:
            self.train()


class ParamStore:
    """Learnable tensors by name (lexicographic order) plus Adam moments.

    Batch-norm running statistics are held by the network's BN states and
    exposed here as named buffers so they travel with checkpoints.
    """

    def __init__(self, params, bn_states=()):
        self.params = {name: params[name] for name in sorted(params)}
        self.m = {name: np.zeros(p.dims) for name, p in self.params.items()}
        self.v = {name: np.zeros(p.dims) for name, p in self.params.items()}
        self.step = 0
        self.bn_states = {bn.name: bn for bn in sorted(bn_states, key=lambda b: b.name)}

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def __getitem__(self, name):
        return self.params[name]

    def buffers(self):
        out = {}
        for name, bn in self.bn_states.items():
            out[f"{name}.running_mean"] = bn.running_mean.reshape(1, -1, 1, 1)
            out[f"{name}.running_var"] = bn.running_var.reshape(1, -1, 1, 1)
        return {k: out[k] for k in sorted(out)}

    def set_buffer(self, name, values):
        base, _, field = name.rpartition(".")
        bn = self.bn_states.get(base)
        if bn is None or field not in ("running_mean", "running_var"):
            raise KeyError(f"unknown buffer {name!r}")
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.size != bn.channels:
            raise ValueError(f"buffer {name!r}: {values.size} values for {bn.channels} channels")
        setattr(bn, field, values.copy())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def total_size(self):
        return sum(p.size for p in self.params.values())

    def to_bytes(self):
        """Raw little-endian parameter bytes in store order (for equality checks)."""
        return b"".join(p.data.astype("<f8").tobytes() for p in self.params.values())


def build_model(cfg=None):
    cfg = cfg or ModelConfig()
    init = Init(cfg.seed, cfg.bn_momentum, cfg.bn_eps)
    net = SpliceNet(cfg, init)
    params = net.named_parameters()
    if len(params) != len(list(net.parameters())):
        raise ValueError("duplicate parameter names in network")
    return net, ParamStore(params, net.bn_states())


def domain_inputs(batch, domains):
    """Slice a dict of stacked numpy arrays into per-domain tensors."""
    return {d: Tensor(batch[d]) for d in domains}
