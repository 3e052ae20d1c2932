"""Model and training configuration with a canonical ``key = value`` text form.

The text form lists every field once, sorted by key; tuples are written
comma-separated.  ``from_text(to_text(cfg)) == cfg`` and the text is what
checkpoints embed, so it must stay byte-stable.
"""

from dataclasses import dataclass, fields, replace

DOMAINS = ("rgb", "edge", "depth")
LR_SCHEDULES = ("exponential", "linear", "constant")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    enabled_domains: tuple = DOMAINS
    image_size: int = 256
    stem_channels: int = 16
    block_layers: tuple = (4, 4)
    growth_rate: int = 8
    bottleneck_factor: int = 4
    squeeze_out: int = 64
    mrfu_widths: tuple = (32, 16, 8, 8)
    dilations: tuple = (2, 3, 4)
    attention_kernel: int = 7
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    # initial mask-head probability; the head bias starts at logit(head_prior)
    head_prior: float = 0.15
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 20
    lr_decay_per_epoch: float = 0.1
    lr_schedule: str = "exponential"
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        doms = tuple(self.enabled_domains)
        if not doms:
            raise ConfigError("enabled_domains must not be empty")
        bad = [d for d in doms if d not in DOMAINS]
        if bad:
            raise ConfigError(f"unknown domains {bad}")
        # fixed concat order regardless of how the caller listed them
        object.__setattr__(self, "enabled_domains", tuple(d for d in DOMAINS if d in doms))
        if len(self.block_layers) != 2:
            raise ConfigError("block_layers needs exactly two entries")
        if not self.mrfu_widths:
            raise ConfigError("at least one upsampling stage is required")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if not 0.0 < self.head_prior < 1.0:
            raise ConfigError("head_prior must lie strictly between 0 and 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        fused = self.image_size // 16
        if fused * 16 != self.image_size or fused < 1:
            raise ConfigError(f"image_size {self.image_size} must be a positive multiple of 16")
        if fused * 2 ** len(self.mrfu_widths) != self.image_size:
            raise ConfigError(
                f"{len(self.mrfu_widths)} upsampling stages do not restore {self.image_size} from {fused}"
            )

    def with_(self, **changes):
        return replace(self, **changes)

    def to_text(self):
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            key = key.strip()
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            values[key] = val.strip()
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        missing = [k for k in sorted(known) if k not in values]
        if missing:
            raise ConfigError(f"missing config key {missing[0]!r}")
        kwargs = {}
        for name, f in known.items():
            default = f.default
            try:
                kwargs[name] = _parse(values[name], default)
            except ValueError as exc:
                raise ConfigError(f"bad value for {name!r}: {exc}") from None
        return cls(**kwargs)


def _format(v):
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text, like):
    if isinstance(like, tuple):
        items = [s.strip() for s in text.split(",") if s.strip()]
        proto = like[0] if like else ""
        return tuple(_parse(s, proto) for s in items)
    if isinstance(like, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text
