"""Residual CNN with a top-down feature pyramid, strides 1/2/4/8.

The first stage keeps full resolution so that P2 is aligned pixel-for-pixel
with the input image.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

STRIDES = (1, 2, 4, 8)
MIN_SIDE = 32


@dataclass
class BackboneConfig:
    widths: tuple[int, int, int, int] = (16, 32, 64, 64)
    blocks: tuple[int, int, int, int] = (1, 1, 1, 1)
    channels: int = 64  # D; 256 for full-scale models
    stem_kernel: int = 3

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.blocks = tuple(int(b) for b in self.blocks)
        if len(self.widths) != 4 or len(self.blocks) != 4:
            raise ValueError("need exactly four stages")
        if self.channels <= 0 or min(self.widths) <= 0:
            raise ValueError("channel counts must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _norm(c: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, c), c)


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.n1 = _norm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.n2 = _norm(cout)
        self.skip = None
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(nn.Conv2d(cin, cout, 1, stride=stride, bias=False), _norm(cout))

    def forward(self, x):
        out = F.relu(self.n1(self.conv1(x)))
        out = self.n2(self.conv2(out))
        return F.relu(out + (x if self.skip is None else self.skip(x)))


class Backbone(nn.Module):
    """Maps a (B, 3, H, W) image batch to the pyramid (P2, P3, P4, P5)."""

    def __init__(self, cfg: BackboneConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or BackboneConfig()
        w0 = cfg.widths[0]
        self.stem = nn.Sequential(
            nn.Conv2d(3, w0, cfg.stem_kernel, padding=cfg.stem_kernel // 2, bias=False), _norm(w0), nn.ReLU())
        stages = []
        cin = w0
        for width, n, stride in zip(cfg.widths, cfg.blocks, STRIDES[:1] + (2, 2, 2)):
            layers = [BasicBlock(cin, width, stride)]
            layers += [BasicBlock(width, width, 1) for _ in range(n - 1)]
            stages.append(nn.Sequential(*layers))
            cin = width
        self.stages = nn.ModuleList(stages)
        d = cfg.channels
        self.lateral = nn.ModuleList(nn.Conv2d(w, d, 1) for w in cfg.widths)
        self.smooth = nn.ModuleList(nn.Conv2d(d, d, 3, padding=1) for _ in cfg.widths)

    def forward(self, image: torch.Tensor) -> tuple[torch.Tensor, ...]:
        if image.dim() == 3:
            image = image.unsqueeze(0)
        h, w = image.shape[-2:]
        if min(h, w) < MIN_SIDE:
            raise ValueError(f"image side must be >= {MIN_SIDE}px, got {h}x{w}")
        ph, pw = (-h) % 8, (-w) % 8
        x = F.pad(image, (0, pw, 0, ph), mode="reflect") if (ph or pw) else image
        feats = []
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        top = self.lateral[3](feats[3])
        outs = [self.smooth[3](top)]
        for k in (2, 1, 0):
            top = self.lateral[k](feats[k]) + F.interpolate(top, size=feats[k].shape[-2:], mode="nearest")
            outs.insert(0, self.smooth[k](top))
        outs[0] = outs[0][..., :h, :w]
        return tuple(outs)


def extract_pyramid(image: torch.Tensor, backbone: Backbone) -> tuple[torch.Tensor, ...]:
    """Run ``backbone`` on a single (3, H, W) or (H, W, 3) image; returns P2..P5 without batch dim."""
    if image.dim() == 3 and image.shape[-1] == 3 and image.shape[0] != 3:
        image = image.permute(2, 0, 1)
    return tuple(p[0] for p in backbone(image.unsqueeze(0)))
