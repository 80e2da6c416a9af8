"""Two-branch segmentation network with a boundary attention map.

Semantic branch: strided stem + four bottleneck stages (strides 4..32) and
an FCN-4s style top-down decoder (bilinear upsample + add).  Its stride-4
output is projected to one channel and upsampled into the boundary
attention map.  The mining branch sees RGB + attention at full resolution.
A BiSeNet-style fusion module merges both and a 1x1 head emits the
confidence map.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .losses import temperature_sigmoid


@dataclass
class ModelConfig:
    max_channels: int = 64
    stage_channels: Sequence[int] = (32, 64, 64, 64)
    bottlenecks_per_stage: Sequence[int] = (2, 2, 2, 2)
    bottleneck_ratio: float = 0.75
    stem_channels: int = 16
    mining_channels: int = 16
    mining_layers: int = 2
    fusion_channels: int = 32
    temperature: float = 4.0
    use_attention: bool = True

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.bottlenecks_per_stage = tuple(int(n) for n in self.bottlenecks_per_stage)
        if len(self.stage_channels) != 4 or len(self.bottlenecks_per_stage) != 4:
            raise ValueError("need exactly four stages (strides 4, 8, 16, 32)")
        counts = (self.max_channels, self.stem_channels, self.mining_channels,
                  self.mining_layers, self.fusion_channels, *self.stage_channels, *self.bottlenecks_per_stage)
        if min(counts) < 1:
            raise ValueError("all channel and block counts must be >= 1")
        if max(self.stage_channels) > self.max_channels or self.stem_channels > self.max_channels:
            raise ValueError(f"stage channels {self.stage_channels} exceed max_channels={self.max_channels}")
        if not 0 < self.bottleneck_ratio <= 1:
            raise ValueError("bottleneck_ratio must be in (0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")

    @property
    def decoder_channels(self) -> int:
        return self.stage_channels[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        d["bottlenecks_per_stage"] = list(self.bottlenecks_per_stage)
        return d

    @classmethod
    def banet64(cls, **overrides) -> "ModelConfig":
        return cls(**overrides)

    @classmethod
    def banet512(cls, **overrides) -> "ModelConfig":
        base = dict(max_channels=512, stage_channels=(64, 128, 256, 512), stem_channels=32,
                    mining_channels=32, fusion_channels=64)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def named(cls, name: str, **overrides) -> "ModelConfig":
        try:
            return {"banet64": cls.banet64, "banet512": cls.banet512, "custom": cls}[name](**overrides)
        except KeyError:
            raise ValueError(f"unknown model variant {name!r}") from None


class ForwardOutput(NamedTuple):
    confidence: torch.Tensor
    attention: torch.Tensor | None
    attention_logits: torch.Tensor | None


def upsample(x: torch.Tensor, size) -> torch.Tensor:
    return F.interpolate(x, size=size, mode="bilinear", align_corners=True)


def conv_bn_relu(cin, cout, k=3, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class Bottleneck(nn.Module):
    """1x1 reduce -> 3x3 -> 1x1 expand, with identity or projection shortcut."""

    def __init__(self, cin, cout, stride=1, ratio=0.5):
        super().__init__()
        mid = max(1, int(round(cout * ratio)))
        self.body = nn.Sequential(
            nn.Conv2d(cin, mid, 1, bias=False), nn.BatchNorm2d(mid), nn.ReLU(inplace=True),
            nn.Conv2d(mid, mid, 3, stride=stride, padding=1, bias=False), nn.BatchNorm2d(mid), nn.ReLU(inplace=True),
            nn.Conv2d(mid, cout, 1, bias=False), nn.BatchNorm2d(cout),
        )
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride=stride, bias=False), nn.BatchNorm2d(cout))
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        return F.relu(self.body(x) + self.shortcut(x))


class SemanticBranch(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c0 = cfg.stem_channels
        # two stride-2 convs bring the input to stride 4
        self.stem = nn.Sequential(conv_bn_relu(3, c0, stride=2), conv_bn_relu(c0, c0, stride=2))
        stages = []
        cin = c0
        for i, (cout, n) in enumerate(zip(cfg.stage_channels, cfg.bottlenecks_per_stage)):
            blocks = [Bottleneck(cin, cout, stride=1 if i == 0 else 2, ratio=cfg.bottleneck_ratio)]
            blocks += [Bottleneck(cout, cout, ratio=cfg.bottleneck_ratio) for _ in range(n - 1)]
            stages.append(nn.Sequential(*blocks))
            cin = cout
        self.stages = nn.ModuleList(stages)
        d = cfg.decoder_channels
        self.lateral = nn.ModuleList(
            [nn.Identity() if c == d else nn.Conv2d(c, d, 1, bias=False) for c in cfg.stage_channels[:3]]
        )
        self.smooth = nn.ModuleList([conv_bn_relu(d, d) for _ in range(3)])
        self.out_channels = d

    def forward(self, x):
        feats = []
        y = self.stem(x)
        for stage in self.stages:
            y = stage(y)
            feats.append(y)
        top = feats[3]
        for i in (2, 1, 0):
            lat = self.lateral[i](feats[i])
            top = self.smooth[i](upsample(top, lat.shape[-2:]) + lat)
        return top


class AttentionHead(nn.Module):
    """1x1 projection to one channel, upsampled to full size, temperature sigmoid."""

    def __init__(self, cin, temperature):
        super().__init__()
        self.proj = nn.Conv2d(cin, 1, 1)
        self.temperature = temperature

    def forward(self, feats, size):
        logits = upsample(self.proj(feats), size)
        return logits, temperature_sigmoid(logits, self.temperature)


class MiningBranch(nn.Module):
    def __init__(self, cin, channels, layers):
        super().__init__()
        mods = [conv_bn_relu(cin, channels)]
        mods += [conv_bn_relu(channels, channels) for _ in range(layers - 1)]
        self.body = nn.Sequential(*mods)
        self.in_channels = cin

    def forward(self, img, attention=None):
        if attention is not None:
            if attention.shape[-2:] != img.shape[-2:]:
                raise ValueError(f"attention {tuple(attention.shape[-2:])} vs image {tuple(img.shape[-2:])}")
            img = torch.cat([img, attention], dim=1)
        if img.shape[1] != self.in_channels:
            raise ValueError(f"mining branch expects {self.in_channels} channels, got {img.shape[1]}")
        return self.body(img)


class FeatureFusion(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.in_channels = cin
        self.conv = conv_bn_relu(cin, cout)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc1 = nn.Conv2d(cout, cout, 1)
        self.fc2 = nn.Conv2d(cout, cout, 1)

    def channel_weights(self, feat):
        return torch.sigmoid(self.fc2(F.relu(self.fc1(self.pool(feat)))))

    def forward(self, high, low):
        x = torch.cat([high, low], dim=1)
        if x.shape[1] != self.in_channels:
            raise ValueError(f"fusion expects {self.in_channels} channels, got {x.shape[1]}")
        feat = self.conv(x)
        return feat + feat * self.channel_weights(feat)


class BANet(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        self.semantic = SemanticBranch(cfg)
        self.attention_head = AttentionHead(self.semantic.out_channels, cfg.temperature) if cfg.use_attention else None
        self.mining = MiningBranch(4 if cfg.use_attention else 3, cfg.mining_channels, cfg.mining_layers)
        self.fusion = FeatureFusion(self.semantic.out_channels + cfg.mining_channels, cfg.fusion_channels)
        self.head = nn.Conv2d(cfg.fusion_channels, 1, 1)

    def forward(self, img: torch.Tensor) -> ForwardOutput:
        h, w = img.shape[-2:]
        if h % 32 or w % 32:
            raise ValueError(f"input size {h}x{w} must be divisible by 32; pad it first")
        high = self.semantic(img)
        logits = attention = None
        if self.attention_head is not None:
            logits, attention = self.attention_head(high, (h, w))
        low = self.mining(img, attention)
        fused = self.fusion(upsample(high, (h, w)), low)
        return ForwardOutput(torch.sigmoid(self.head(fused)), attention, logits)


def count_parameters(model_or_cfg) -> int:
    model = model_or_cfg if isinstance(model_or_cfg, nn.Module) else BANet(model_or_cfg)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def parameter_megabytes(count: int) -> float:
    """Storage at 4 bytes per scalar, in MiB."""
    return 4 * count / 2**20
