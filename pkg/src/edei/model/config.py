"""Architecture hyperparameters, pinned in one place."""
from __future__ import annotations

from dataclasses import asdict, dataclass

from ..representation import DEFAULT_BINS


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 32
    num_scales: int = 3
    attn_heads: int = 4
    dcn_groups: int = 8
    event_bins: int = DEFAULT_BINS
    image_channels: int = 3
    res_blocks: int = 3
    ffn_expansion: int = 2

    def __post_init__(self):
        if self.num_scales < 1:
            raise ValueError("num_scales must be >= 1")
        if self.base_channels % self.attn_heads != 0:
            raise ValueError("base_channels must be divisible by attn_heads")
        if self.base_channels % self.dcn_groups != 0:
            raise ValueError("base_channels must be divisible by dcn_groups")
        if self.res_blocks < 1:
            raise ValueError("res_blocks must be >= 1")

    def channels_at(self, scale: int) -> int:
        return self.base_channels * (2**scale)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: int(v) for k, v in d.items()})


# Small preset keeping training and the test suite fast on a CPU.
DESK_MODEL = ModelConfig(base_channels=16, num_scales=2, attn_heads=4, dcn_groups=4)
