"""Plain UNet baseline for the fully-supervised upper bound (trained on the
target domain) and the no-adaptation lower bound (trained on source, tested
on target). Deliberately norm-free so the no-adaptation bound honestly
reflects the domain gap."""

from __future__ import annotations

import torch
import torch.nn as nn

from .translation import _init_weights


def _double_conv(in_c: int, out_c: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_c, out_c, 3, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(out_c, out_c, 3, padding=1),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    """Small encoder-decoder with skip connections; softmax class probabilities."""

    def __init__(self, num_classes: int, in_channels: int = 1, base_channels: int = 16):
        super().__init__()
        c = base_channels
        self.num_classes = num_classes
        self.enc1 = _double_conv(in_channels, c)
        self.enc2 = _double_conv(c, 2 * c)
        self.enc3 = _double_conv(2 * c, 4 * c)
        self.bottleneck = _double_conv(4 * c, 8 * c)
        self.pool = nn.MaxPool2d(2)
        self.up3 = nn.ConvTranspose2d(8 * c, 4 * c, 2, stride=2)
        self.dec3 = _double_conv(8 * c, 4 * c)
        self.up2 = nn.ConvTranspose2d(4 * c, 2 * c, 2, stride=2)
        self.dec2 = _double_conv(4 * c, 2 * c)
        self.up1 = nn.ConvTranspose2d(2 * c, c, 2, stride=2)
        self.dec1 = _double_conv(2 * c, c)
        self.out = nn.Conv2d(c, num_classes + 1, 1)
        _init_weights(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4:
            raise ValueError(f"expected (B, C, H, W) input, got {tuple(x.shape)}")
        if x.shape[2] % 8 or x.shape[3] % 8:
            raise ValueError(f"input H, W must be divisible by 8, got {tuple(x.shape[2:])}")
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        e3 = self.enc3(self.pool(e2))
        b = self.bottleneck(self.pool(e3))
        d3 = self.dec3(torch.cat([self.up3(b), e3], dim=1))
        d2 = self.dec2(torch.cat([self.up2(d3), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], dim=1))
        return torch.softmax(self.out(d1), dim=1)
