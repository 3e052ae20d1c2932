import numpy as np
import pytest

from vasl.config import ConfigError, ModelConfig
from vasl.extractor import DenseBlock, Transition, VaMdfe
from vasl.fusion import VaDs, VaMrfu
from vasl.gradcheck import micro_config
from vasl.model import build_model
from vasl.tensor import Tape, Tensor, backward, randn
from vasl.train import focal_loss

CHANNELS = {"rgb": 3, "edge": 1, "depth": 1}


def _inputs(domains, n=1, size=32, seed=0):
    out = {}
    for k, d in enumerate(domains):
        x = randn((n, CHANNELS[d], size, size), seed + k)
        out[d] = Tensor(1.0 / (1.0 + np.exp(-x.data)))
    return out


def test_default_model_has_eleven_attention_layers():
    net, _ = build_model(ModelConfig())
    assert len(net.attention_layers()) == 11
    assert all(l.param_count() == 300 for l in net.attention_layers())


@pytest.mark.parametrize("domain", ["rgb", "edge", "depth"])
def test_single_domain_has_seven_attention_layers(domain):
    net, _ = build_model(ModelConfig(enabled_domains=(domain,)))
    assert len(net.attention_layers()) == 7


def test_default_structure():
    net, store = build_model(ModelConfig())
    mods = list(net.modules())
    assert sum(isinstance(m, VaMdfe) for m in mods) == 3
    assert sum(isinstance(m, DenseBlock) for m in mods) == 6
    assert sum(isinstance(m, Transition) for m in mods) == 3
    assert sum(isinstance(m, VaDs) for m in mods) == 1
    assert sum(isinstance(m, VaMrfu) for m in mods) == 4
    assert net.vads.in_channels == 3 * 56
    assert store.total_size() == sum(p.size for p in net.parameters())


def test_store_is_sorted_and_moments_match():
    _, store = build_model(micro_config())
    names = [n for n, _ in store]
    assert names == sorted(names)
    for name, p in store:
        assert store.m[name].shape == p.dims and store.v[name].shape == p.dims


def test_same_seed_same_initial_bytes():
    a = build_model(micro_config(seed=4))[1].to_bytes()
    assert a == build_model(micro_config(seed=4))[1].to_bytes()
    assert a != build_model(micro_config(seed=5))[1].to_bytes()


def test_init_statistics():
    _, store = build_model(ModelConfig())
    w = store["rgb.block1.layer0.conv1.weight"]
    # std sqrt(2 / fan_in) with fan_in = 16 * 1 * 1
    assert abs(w.data.std() - np.sqrt(2 / 16)) < 0.05
    assert np.all(store["rgb.stem.bn.gamma"].data == 1.0)
    assert np.all(store["rgb.stem.bn.beta"].data == 0.0)


def test_domain_order_is_canonical():
    cfg = ModelConfig(enabled_domains=("depth", "rgb"))
    assert cfg.enabled_domains == ("rgb", "depth")


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        ModelConfig(enabled_domains=())
    with pytest.raises(ConfigError):
        ModelConfig(enabled_domains=("thermal",))
    with pytest.raises(ConfigError):
        ModelConfig(mrfu_widths=(8, 8, 8))


def test_config_text_round_trip():
    cfg = micro_config().with_(lr=3e-4, enabled_domains=("edge",))
    text = cfg.to_text()
    assert ModelConfig.from_text(text) == cfg
    assert ModelConfig.from_text(text).to_text() == text


def test_config_missing_and_unknown_keys():
    lines = ModelConfig().to_text().splitlines()
    with pytest.raises(ConfigError, match="seed"):
        ModelConfig.from_text("\n".join(l for l in lines if not l.startswith("seed")))
    with pytest.raises(ConfigError, match="colour"):
        ModelConfig.from_text("\n".join(lines + ["colour = red"]))


def test_micro_forward_shape_and_range():
    net, _ = build_model(micro_config())
    out = net(_inputs(net.domains, n=2))
    assert out.dims == (2, 1, 32, 32)
    assert np.all((out.data > 0) & (out.data < 1))


def test_missing_domain_input():
    net, _ = build_model(micro_config())
    with pytest.raises(ValueError):
        net(_inputs(("rgb",)))


def test_predict_is_batch_independent():
    net, _ = build_model(micro_config())
    x = _inputs(net.domains, n=2, seed=3)
    both = net.predict(x)
    one = net.predict({d: Tensor(t.data[1:]) for d, t in x.items()})
    np.testing.assert_allclose(both[1:], one, rtol=1e-12, atol=1e-14)


def test_gradient_reaches_every_parameter():
    cfg = micro_config()
    net, store = build_model(cfg)
    target = (np.arange(2 * 32 * 32).reshape(2, 1, 32, 32) % 5 == 0).astype(float)
    with Tape():
        backward(focal_loss(net(_inputs(net.domains, n=2)), target))
    nonzero = sum(1 for _, p in store if p.grad is not None and np.any(p.grad != 0))
    assert nonzero / len(store) >= 0.99
