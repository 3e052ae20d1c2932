"""Central finite-difference verification of tape gradients."""

from dataclasses import dataclass

import numpy as np

from . import rng
from .tensor import Tape, Tensor, backward, kink_trace, mul, randn, sum_all

DEFAULT_STEP = 1e-5
# denominator floor for the relative error; keeps coordinates whose true
# derivative is ~0 from turning rounding noise into a huge ratio
REL_FLOOR = 1e-6


@dataclass
class GradcheckReport:
    name: str
    max_rel_error: float
    checked: int
    skipped: int

    def passed(self, tol=1e-5):
        return self.checked > 0 and self.max_rel_error < tol

    def __str__(self):
        return (
            f"{self.name:<28s} max_rel_err={self.max_rel_error:.3e} "
            f"checked={self.checked} skipped={self.skipped}"
        )


def relative_error(analytic, numeric, floor=REL_FLOOR):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _same_trace(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(fn, tensors, seed=0, step=DEFAULT_STEP, max_coords=None, name="op", coords=None):
    """Compare tape gradients of ``fn(*tensors)`` with central differences.

    Non-scalar outputs are contracted against fixed random weights so every
    output element contributes.  A coordinate is skipped when either probe
    lands on a different smooth piece (relu sign, max argument, clamp) than
    the unperturbed point.

    ``coords`` optionally lists explicit ``(tensor_index, flat_index)`` pairs;
    otherwise every coordinate is probed, or a seeded sample of
    ``max_coords`` per tensor.
    """
    tensors = list(tensors)
    for t in tensors:
        t.requires_grad = True
        t.grad = None
        if not t.data.flags.c_contiguous:
            t.data = np.ascontiguousarray(t.data)

    with kink_trace() as base_trace, Tape():
        out = fn(*tensors)
        if out.dims == (1, 1, 1, 1):
            weights = np.ones((1, 1, 1, 1))
            loss = out
        else:
            weights = rng.standard_normal(out.size, rng.derive_seed(seed, 7)).reshape(out.dims)
            loss = sum_all(mul(out, Tensor(weights)))
        backward(loss)

    def probe(t, flat_index, delta):
        view = t.data.reshape(-1)
        orig = view[flat_index]
        view[flat_index] = orig + delta
        try:
            with kink_trace() as trace:
                res = fn(*tensors).data.copy()
        finally:
            view[flat_index] = orig
        return res, trace

    if coords is None:
        coords = []
        for k, t in enumerate(tensors):
            idx = np.arange(t.size)
            if max_coords is not None and t.size > max_coords:
                order = np.argsort(rng.uniform_words(t.size, rng.derive_seed(seed, 100 + k)), kind="stable")
                idx = np.sort(order[:max_coords])
            coords.extend((k, int(i)) for i in idx)
    analytic = [np.zeros(t.dims) if t.grad is None else t.grad for t in tensors]

    worst = 0.0
    checked = skipped = 0
    for k, i in coords:
        t = tensors[k]
        plus, tp = probe(t, i, step)
        minus, tm = probe(t, i, -step)
        if not (_same_trace(tp, base_trace) and _same_trace(tm, base_trace)):
            skipped += 1
            continue
        numeric = float(((plus - minus) * weights).sum() / (2.0 * step))
        err = relative_error(float(analytic[k].reshape(-1)[i]), numeric)
        worst = max(worst, err)
        checked += 1
    return GradcheckReport(name, worst, checked, skipped)


def gradcheck(op, input_dims, seed=0, step=DEFAULT_STEP, max_coords=None, name=None):
    """Draw standard-normal inputs of the given dims and check ``op`` on them."""
    inputs = [randn(d, rng.derive_seed(seed, k), requires_grad=True) for k, d in enumerate(input_dims)]
    return check_gradients(op, inputs, seed=seed, step=step, max_coords=max_coords,
                           name=name or getattr(op, "__name__", "op"))


# ---------------------------------------------------------------------------
# suite over every layer type plus a micro network
# ---------------------------------------------------------------------------

def micro_config(seed=0, domains=("rgb", "edge", "depth")):
    from .config import ModelConfig

    return ModelConfig(
        enabled_domains=domains, image_size=32, stem_channels=4, block_layers=(2, 2),
        growth_rate=2, bottleneck_factor=2, squeeze_out=6, mrfu_widths=(4, 4, 3, 2),
        batch_size=2, seed=seed,
    )


def _micro_network_check(seed, n_coords=20):
    from .extractor import DOMAIN_CHANNELS as chans
    from .model import build_model
    from .train import focal_loss

    cfg = micro_config(seed)
    net, store = build_model(cfg)
    inputs = {d: randn((2, chans[d], 32, 32), rng.derive_seed(seed, 300 + k)) for k, d in enumerate(cfg.enabled_domains)}
    for d in inputs:
        inputs[d].data = 1.0 / (1.0 + np.exp(-inputs[d].data))
    target = (rng.uniform_words(2 * 32 * 32, rng.derive_seed(seed, 400)) < 0.3).astype(np.float64)
    target = target.reshape(2, 1, 32, 32)
    params = [p for _, p in store]

    def fn(*_):
        return focal_loss(net(inputs), target, cfg.focal_gamma, cfg.focal_alpha)

    sizes = np.array([p.size for p in params])
    flat = np.argsort(rng.uniform_words(int(sizes.sum()), rng.derive_seed(seed, 500)), kind="stable")[:n_coords]
    offsets = np.cumsum(np.concatenate([[0], sizes]))
    coords = []
    for f in np.sort(flat):
        k = int(np.searchsorted(offsets, f, side="right") - 1)
        coords.append((k, int(f - offsets[k])))
    return check_gradients(fn, params, seed=seed, name="micro_network", coords=coords)


def run_suite(seed=0):
    """Gradient checks for every differentiable op; returns a list of reports."""
    from . import layers as L
    from . import tensor as T
    from .attention import TripletAttention
    from .extractor import DenseBlock, DenseBlockSpec, VaMdfe, ExtractorConfig
    from .fusion import Aspp, VaDs, VaMrfu
    from .module import Init
    from .train import focal_loss

    init = Init(seed)
    x_dims = (2, 4, 8, 8)
    reports = []

    def add(name, op, dims, **kw):
        reports.append(gradcheck(op, dims, seed=seed, name=name, **kw))

    def module_check(name, module, dims, call=None):
        x = randn(dims, rng.derive_seed(seed, 900 + len(reports)))
        params = list(module.parameters())
        fn = (lambda x_, *_: module(x_)) if call is None else call
        reports.append(check_gradients(fn, [x] + params, seed=seed, name=name, max_coords=40))

    add("add_sub_mul", lambda a, b: T.sub(T.add(T.mul(a, b), a), b), [x_dims, x_dims])
    add("scale", lambda a: T.scale(a, -1.7), [x_dims])
    add("relu", T.relu, [x_dims])
    add("sigmoid", T.sigmoid, [x_dims])
    add("concat_channels", lambda a, b: T.concat_channels([a, b]), [(2, 2, 8, 8), (2, 3, 8, 8)])
    add("swap_axes_gate", lambda a, g: T.channel_gate(T.swap_axes(a, 1, 2), g), [x_dims, (2, 1, 4, 8)])

    dil = L.ConvSpec(4, 3, (3, 3), padding=2, dilation=2, bias=True)
    add("conv2d_3x3_dil2", lambda a, w, b: L.conv2d(a, dil, w, b), [x_dims, dil.weight_dims, (1, 3, 1, 1)])
    stem = L.ConvSpec(3, 2, (7, 7), stride=2, padding=3, bias=False)
    add("conv2d_7x7_stride2", lambda a, w: L.conv2d(a, stem, w), [(2, 3, 8, 8), stem.weight_dims])
    add("transposed_conv2d", lambda a, w: L.transposed_conv2d(a, w), [x_dims, (4, 3, 2, 2)])

    def bn_op(mode):
        state = L.BatchNormState(4)
        state.running_mean = np.linspace(-0.5, 0.5, 4)
        state.running_var = np.linspace(0.5, 2.0, 4)
        state.mode = mode

        def op(a, gamma, beta):
            state.gamma, state.beta = gamma, beta
            return L.batch_norm(a, state)
        return op

    add("batch_norm_train", bn_op("train"), [x_dims, (1, 4, 1, 1), (1, 4, 1, 1)])
    add("batch_norm_eval", bn_op("eval"), [x_dims, (1, 4, 1, 1), (1, 4, 1, 1)])
    add("pool2d_avg", lambda a: L.pool2d(a, "avg"), [x_dims])
    add("pool2d_max", lambda a: L.pool2d(a, "max"), [x_dims])
    add("pool2d_max_k3s2p1", lambda a: L.pool2d(a, "max", k=3, s=2, pad=1), [x_dims])
    add("zpool_channel", lambda a: L.zpool(a, "channel"), [x_dims])
    add("zpool_height", lambda a: L.zpool(a, "height"), [x_dims])

    def focal(p_raw):
        target = (np.arange(2 * 8 * 8).reshape(2, 1, 8, 8) % 3 == 0).astype(np.float64)
        return focal_loss(T.sigmoid(p_raw), target, 2.0, 0.25)

    add("focal_loss", focal, [(2, 1, 8, 8)])

    module_check("triplet_attention", TripletAttention("att", init), x_dims)
    module_check("dense_block", DenseBlock("blk", init, 4, DenseBlockSpec(2, 2, 2)), x_dims)
    module_check("extractor", VaMdfe("rgb", init, ExtractorConfig("rgb", 4, (DenseBlockSpec(1, 2, 2),) * 2)), (2, 3, 16, 16))
    vads = VaDs("vads", init, 4, 3)
    module_check("va_ds", vads, x_dims, call=lambda x_, *_: vads(T.split_channels(x_, [2, 2])))
    module_check("aspp", Aspp("aspp", init, 4), x_dims)
    module_check("va_mrfu", VaMrfu("mrfu", init, 4, 3), (2, 4, 4, 4))
    reports.append(_micro_network_check(seed))
    return reports
