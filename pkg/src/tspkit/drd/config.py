from __future__ import annotations

from dataclasses import asdict, dataclass, replace

TOKEN_MODES = ("region", "class")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DrdConfig:
    num_region_tokens: int = 5
    num_heads: int = 12
    channels: int = 36
    num_classes: int = 21
    aspp_dilations: tuple[int, ...] = (1, 6, 12, 18)
    token_mode: str = "region"
    in_channels: int = 3
    ffn_ratio: int = 4
    # Scale the token attention by sqrt(C) instead of sqrt(C / heads).
    literal_sqrt_c: bool = False
    token_init_std: float = 0.02
    # Multiply S by the number of positions before the final projection.
    rescale_maps: bool = True

    def __post_init__(self):
        object.__setattr__(self, "aspp_dilations", tuple(int(d) for d in self.aspp_dilations))
        for name in ("num_region_tokens", "num_heads", "channels", "num_classes", "in_channels", "ffn_ratio"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.channels % self.num_heads:
            raise ConfigError(f"channels ({self.channels}) must be divisible by num_heads ({self.num_heads})")
        if not self.aspp_dilations or any(d < 1 for d in self.aspp_dilations):
            raise ConfigError("aspp_dilations must be a non-empty list of positive integers")
        if self.token_mode not in TOKEN_MODES:
            raise ConfigError(f"token_mode must be one of {TOKEN_MODES}")
        if self.token_mode == "class" and self.num_region_tokens != self.num_classes:
            raise ConfigError("token_mode='class' needs num_region_tokens == num_classes")

    @property
    def head_dim(self) -> int:
        return self.channels // self.num_heads

    def with_(self, **changes) -> "DrdConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aspp_dilations"] = list(self.aspp_dilations)
        return d


# Token/head settings of the ablation (tokens, heads); channels scaled to desk size.
ABLATION_SETTINGS = {
    "setting1": dict(num_region_tokens=1, num_heads=12),
    "setting2": dict(num_region_tokens=5, num_heads=12),
    "setting3": dict(num_region_tokens=20, num_heads=12),
    "setting4": dict(num_region_tokens=20, num_heads=24),
}


def preset(name: str, **overrides) -> DrdConfig:
    if name == "class":
        k = overrides.pop("num_classes", 21)
        return DrdConfig(num_region_tokens=k, num_classes=k, token_mode="class", **overrides)
    if name not in ABLATION_SETTINGS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(ABLATION_SETTINGS) + ['class']}")
    base = dict(ABLATION_SETTINGS[name])
    if base["num_heads"] == 24:
        base["channels"] = 48
    base.update(overrides)
    return DrdConfig(**base)
